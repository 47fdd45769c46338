#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmn.hpp"

namespace lmnff {

// Time indexing convention used throughout the library:
//   * time is 0-based, the model predicts y(k+1) from samples at times <= k;
//   * a delay i >= 1 refers to the sample s(k - i + 1), so delay 1 is the
//     current sample s(k);
//   * regressors are ordered inputs, then disturbances, then outputs; channels
//     in index order; delays ascending within a channel.

enum class SignalKind { Input, Disturbance, Output };

/// Delays of one signal channel, for the linear part and for the validity part.
struct DelaySet {
    std::vector<int> lin;
    std::vector<int> val;

    [[nodiscard]] int max_delay() const { return lin.empty() ? 0 : lin.back(); }
    [[nodiscard]] bool empty() const { return lin.empty() && val.empty(); }
};

/// Delay sets of a NARX model: one DelaySet per input, disturbance and
/// (fed-back) output channel. The SISO case is one input and one output.
struct DelayConfig {
    std::vector<DelaySet> inputs;
    std::vector<DelaySet> disturbances;
    std::vector<DelaySet> outputs;

    /// Single input / single output, optional single disturbance.
    static DelayConfig siso(std::vector<int> input_lin, std::vector<int> output_lin,
                            std::vector<int> input_val = {}, std::vector<int> output_val = {},
                            std::vector<int> dist_lin = {}, std::vector<int> dist_val = {}) {
        DelayConfig c;
        c.inputs.push_back({std::move(input_lin), std::move(input_val)});
        c.outputs.push_back({std::move(output_lin), std::move(output_val)});
        if (!dist_lin.empty() || !dist_val.empty())
            c.disturbances.push_back({std::move(dist_lin), std::move(dist_val)});
        c.normalize();
        return c;
    }

    [[nodiscard]] std::size_t input_count() const { return inputs.size(); }
    [[nodiscard]] std::size_t disturbance_count() const { return disturbances.size(); }
    [[nodiscard]] std::size_t output_count() const { return outputs.size(); }

    [[nodiscard]] const std::vector<DelaySet>& channels(SignalKind kind) const {
        switch (kind) {
        case SignalKind::Input: return inputs;
        case SignalKind::Disturbance: return disturbances;
        default: return outputs;
        }
    }

    [[nodiscard]] int max_delay(SignalKind kind) const {
        int m = 0;
        for (const auto& s : channels(kind))
            m = std::max(m, s.max_delay());
        return m;
    }

    /// max(nu, nd, ny): samples of history needed before the first prediction.
    [[nodiscard]] int max_delay() const {
        return std::max({max_delay(SignalKind::Input), max_delay(SignalKind::Disturbance),
                         max_delay(SignalKind::Output)});
    }

    [[nodiscard]] std::size_t lin_dim() const {
        std::size_t n = 0;
        for (auto kind : {SignalKind::Input, SignalKind::Disturbance, SignalKind::Output})
            for (const auto& s : channels(kind))
                n += s.lin.size();
        return n;
    }

    [[nodiscard]] std::size_t val_dim() const {
        std::size_t n = 0;
        for (auto kind : {SignalKind::Input, SignalKind::Disturbance, SignalKind::Output})
            for (const auto& s : channels(kind))
                n += s.val.size();
        return n;
    }

    /// Sorts and deduplicates every set.
    void normalize() {
        for (auto* group : {&inputs, &disturbances, &outputs})
            for (auto& s : *group)
                for (auto* v : {&s.lin, &s.val}) {
                    std::sort(v->begin(), v->end());
                    v->erase(std::unique(v->begin(), v->end()), v->end());
                }
    }

    /// Throws ShapeError unless all delays are >= 1 and every validity set is a
    /// subset of the matching linear set.
    void validate() const {
        auto check = [](const DelaySet& s, const std::string& what) {
            for (const auto* v : {&s.lin, &s.val})
                for (int d : *v)
                    if (d < 1)
                        throw ShapeError(what + ": delays must be >= 1, got " + std::to_string(d));
            if (!std::is_sorted(s.lin.begin(), s.lin.end()) ||
                !std::is_sorted(s.val.begin(), s.val.end()))
                throw ShapeError(what + ": delay sets must be sorted");
            for (int d : s.val)
                if (!std::binary_search(s.lin.begin(), s.lin.end(), d))
                    throw ShapeError(what + ": validity delay " + std::to_string(d) +
                                     " is not among the linear delays");
        };
        for (std::size_t j = 0; j < inputs.size(); ++j)
            check(inputs[j], "input " + std::to_string(j));
        for (std::size_t j = 0; j < disturbances.size(); ++j)
            check(disturbances[j], "disturbance " + std::to_string(j));
        for (std::size_t j = 0; j < outputs.size(); ++j)
            check(outputs[j], "output " + std::to_string(j));
    }
};

/// One entry of a regressor vector: signal kind, channel, delay.
struct RegressorTerm {
    SignalKind kind;
    std::size_t channel;
    int delay;

    /// Lag relative to the current time k (delay 1 is lag 0).
    [[nodiscard]] int lag() const { return delay - 1; }
};

[[nodiscard]] inline std::vector<RegressorTerm> regressor_layout(const DelayConfig& delays,
                                                                 bool validity) {
    std::vector<RegressorTerm> terms;
    for (auto kind : {SignalKind::Input, SignalKind::Disturbance, SignalKind::Output}) {
        const auto& chans = delays.channels(kind);
        for (std::size_t c = 0; c < chans.size(); ++c)
            for (int d : validity ? chans[c].val : chans[c].lin)
                terms.push_back({kind, c, d});
    }
    return terms;
}

/// Equal-length, uniformly sampled channels.
struct TimeSeriesDataset {
    double sample_period = 1.0;
    std::vector<std::vector<double>> u;
    std::vector<std::vector<double>> d;
    std::vector<std::vector<double>> y;

    [[nodiscard]] std::size_t length() const {
        if (!y.empty())
            return y.front().size();
        if (!u.empty())
            return u.front().size();
        return 0;
    }

    [[nodiscard]] const std::vector<std::vector<double>>& channels(SignalKind kind) const {
        switch (kind) {
        case SignalKind::Input: return u;
        case SignalKind::Disturbance: return d;
        default: return y;
        }
    }

    void validate() const {
        const std::size_t n = length();
        for (auto kind : {SignalKind::Input, SignalKind::Disturbance, SignalKind::Output})
            for (const auto& ch : channels(kind)) {
                if (ch.size() != n)
                    throw ShapeError("ragged dataset: channel lengths differ (" +
                                     std::to_string(ch.size()) + " vs " + std::to_string(n) + ")");
                for (double v : ch)
                    if (!std::isfinite(v))
                        throw ShapeError("dataset contains non-finite values");
            }
        if (!(sample_period > 0.0))
            throw ShapeError("sample period must be positive");
    }
};

/// NARX regressor matrices: row r holds (x_lin, x_val) at time k = first_index + r
/// and target y(k+1).
struct RegressorSet {
    MatrixXd x_lin;
    MatrixXd x_val;
    VectorXd target;
    std::size_t first_index = 0;

    [[nodiscard]] std::size_t rows() const { return static_cast<std::size_t>(target.size()); }
};

/// Assembles one regressor vector at time k. `get(kind, channel, t)` returns
/// the sample of the given signal at time t.
template <class Getter>
[[nodiscard]] VectorXd assemble_regressor(const std::vector<RegressorTerm>& layout, const Getter& get,
                                          long k) {
    VectorXd x(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t r = 0; r < layout.size(); ++r)
        x[static_cast<Eigen::Index>(r)] =
            get(layout[r].kind, layout[r].channel, k - layout[r].lag());
    return x;
}

[[nodiscard]] inline RegressorSet build_regressors(const TimeSeriesDataset& data,
                                                   const DelayConfig& delays,
                                                   std::size_t target_output = 0) {
    data.validate();
    delays.validate();
    if (delays.input_count() > data.u.size() || delays.disturbance_count() > data.d.size() ||
        delays.output_count() > data.y.size())
        throw ShapeError("delay configuration references more channels than the dataset has");
    if (target_output >= data.y.size())
        throw ShapeError("target output " + std::to_string(target_output) + " not in dataset");

    const std::size_t L = data.length();
    const auto maxd = static_cast<std::size_t>(std::max(1, delays.max_delay()));
    if (L <= maxd)
        throw InsufficientDataError("series of length " + std::to_string(L) +
                                    " too short for maximum delay " + std::to_string(maxd));

    const auto lin = regressor_layout(delays, false);
    const auto val = regressor_layout(delays, true);
    auto get = [&](SignalKind kind, std::size_t c, long t) {
        return data.channels(kind)[c][static_cast<std::size_t>(t)];
    };

    RegressorSet set;
    const std::size_t n = L - maxd;
    set.first_index = maxd - 1;
    set.x_lin.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(lin.size()));
    set.x_val.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(val.size()));
    set.target.resize(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
        const long k = static_cast<long>(set.first_index + r);
        const auto ri = static_cast<Eigen::Index>(r);
        set.x_lin.row(ri) = assemble_regressor(lin, get, k).transpose();
        set.x_val.row(ri) = assemble_regressor(val, get, k).transpose();
        set.target[ri] = data.y[target_output][static_cast<std::size_t>(k + 1)];
    }
    return set;
}

/// A local model network wrapped as a discrete-time NARX model predicting
/// output channel `target`.
class NarxModel {
public:
    NarxModel() = default;

    NarxModel(LocalModelNetwork net, DelayConfig delays, std::size_t target = 0)
        : net_(std::move(net)), delays_(std::move(delays)), target_(target) {
        delays_.validate();
        if (net_.lin_dim() != delays_.lin_dim() || net_.val_dim() != delays_.val_dim())
            throw ShapeError("network dimensions (" + std::to_string(net_.lin_dim()) + ", " +
                             std::to_string(net_.val_dim()) + ") do not match delay sets (" +
                             std::to_string(delays_.lin_dim()) + ", " +
                             std::to_string(delays_.val_dim()) + ")");
        if (delays_.output_count() == 0 || target_ >= delays_.output_count())
            throw ShapeError("target output " + std::to_string(target_) +
                             " outside the model's output channels");
        lin_layout_ = regressor_layout(delays_, false);
        val_layout_ = regressor_layout(delays_, true);
    }

    [[nodiscard]] const LocalModelNetwork& net() const { return net_; }
    [[nodiscard]] const DelayConfig& delays() const { return delays_; }
    [[nodiscard]] std::size_t target() const { return target_; }
    [[nodiscard]] const std::vector<RegressorTerm>& lin_layout() const { return lin_layout_; }
    [[nodiscard]] const std::vector<RegressorTerm>& val_layout() const { return val_layout_; }

    /// Index into the gain vector of the given linear term, or -1 when absent.
    [[nodiscard]] long gain_index(SignalKind kind, std::size_t channel, int delay) const {
        for (std::size_t r = 0; r < lin_layout_.size(); ++r)
            if (lin_layout_[r].kind == kind && lin_layout_[r].channel == channel &&
                lin_layout_[r].delay == delay)
                return static_cast<long>(r);
        return -1;
    }

    /// Gain of local model i on the given term, 0 if the delay is not used.
    [[nodiscard]] double gain(std::size_t i, SignalKind kind, std::size_t channel, int delay) const {
        const long r = gain_index(kind, channel, delay);
        return r < 0 ? 0.0 : net_.model(i).gains[r];
    }

    template <class Getter>
    [[nodiscard]] double predict(const Getter& get, long k) const {
        return net_.evaluate(assemble_regressor(lin_layout_, get, k),
                             assemble_regressor(val_layout_, get, k));
    }

    template <class Getter>
    [[nodiscard]] VectorXd validities(const Getter& get, long k) const {
        return net_.validity_weights(assemble_regressor(val_layout_, get, k));
    }

    [[nodiscard]] NarxModel with_net(LocalModelNetwork net) const {
        return NarxModel(std::move(net), delays_, target_);
    }

private:
    LocalModelNetwork net_;
    DelayConfig delays_;
    std::size_t target_ = 0;
    std::vector<RegressorTerm> lin_layout_;
    std::vector<RegressorTerm> val_layout_;
};

/// Predicts y(k+1) where k is the last sample of `history`.
[[nodiscard]] inline double one_step_predict(const NarxModel& model,
                                             const TimeSeriesDataset& history) {
    history.validate();
    const std::size_t L = history.length();
    const auto& dl = model.delays();
    if (dl.input_count() > history.u.size() || dl.disturbance_count() > history.d.size() ||
        dl.output_count() > history.y.size())
        throw ShapeError("history lacks channels required by the model");
    if (L < static_cast<std::size_t>(std::max(1, dl.max_delay())))
        throw InsufficientDataError("history of length " + std::to_string(L) +
                                    " does not cover maximum delay " +
                                    std::to_string(dl.max_delay()));
    auto get = [&](SignalKind kind, std::size_t c, long t) {
        return history.channels(kind)[c][static_cast<std::size_t>(t)];
    };
    return model.predict(get, static_cast<long>(L) - 1);
}

/// Samples preceding a free-run simulation. Inputs and disturbances hold
/// times ..., -2, -1; outputs hold times ..., -1, 0 (the last entry is the
/// current output, paired with the first sample of the input series).
struct InitialHistory {
    std::vector<std::vector<double>> u;
    std::vector<std::vector<double>> d;
    std::vector<std::vector<double>> y;
};

namespace detail {

/// One signal on a shifted index: value(t) = data[t + origin].
struct Timeline {
    std::vector<double> data;
    long origin = 0;

    [[nodiscard]] double at(long t) const {
        const long i = t + origin;
        if (i < 0 || i >= static_cast<long>(data.size()))
            throw InsufficientDataError("sample at time " + std::to_string(t) + " not available");
        return data[static_cast<std::size_t>(i)];
    }
};

} // namespace detail

/// Free-run (simulation) prediction of a set of NARX models, one per output
/// channel, feeding predictions back as delayed outputs. Returns y(1..L) per
/// output channel, where L is the input series length.
[[nodiscard]] inline std::vector<std::vector<double>>
free_run_simulate(std::span<const NarxModel> models, const std::vector<std::vector<double>>& u,
                  const std::vector<std::vector<double>>& d, const InitialHistory& init) {
    if (models.empty())
        throw ShapeError("free_run_simulate needs at least one model");
    const std::size_t dy = models.size();
    std::vector<const NarxModel*> by_target(dy, nullptr);
    for (const auto& m : models) {
        if (m.target() >= dy || by_target[m.target()] != nullptr)
            throw ShapeError("models must cover each output channel exactly once");
        by_target[m.target()] = &m;
        if (m.delays().output_count() > dy || m.delays().input_count() > u.size() ||
            m.delays().disturbance_count() > d.size())
            throw ShapeError("model arity exceeds the provided signals");
    }
    const std::size_t L = u.empty() ? 0 : u.front().size();
    for (const auto* group : {&u, &d})
        for (const auto& ch : *group)
            if (ch.size() != L)
                throw ShapeError("input and disturbance series must have equal length");
    if (init.u.size() < u.size() || init.d.size() < d.size() || init.y.size() < dy)
        throw ShapeError("initial history lacks channels");

    std::vector<detail::Timeline> tu(u.size()), td(d.size()), ty(dy);
    for (std::size_t c = 0; c < u.size(); ++c) {
        tu[c].data = init.u[c];
        tu[c].data.insert(tu[c].data.end(), u[c].begin(), u[c].end());
        tu[c].origin = static_cast<long>(init.u[c].size());
    }
    for (std::size_t c = 0; c < d.size(); ++c) {
        td[c].data = init.d[c];
        td[c].data.insert(td[c].data.end(), d[c].begin(), d[c].end());
        td[c].origin = static_cast<long>(init.d[c].size());
    }
    for (std::size_t c = 0; c < dy; ++c) {
        ty[c].data = init.y[c];
        ty[c].origin = static_cast<long>(init.y[c].size()) - 1;
        if (init.y[c].empty())
            throw InsufficientDataError("initial output history is empty");
    }
    auto get = [&](SignalKind kind, std::size_t c, long t) {
        switch (kind) {
        case SignalKind::Input: return tu[c].at(t);
        case SignalKind::Disturbance: return td[c].at(t);
        default: return ty[c].at(t);
        }
    };

    std::vector<std::vector<double>> out(dy, std::vector<double>(L));
    std::vector<double> next(dy);
    for (std::size_t k = 0; k < L; ++k) {
        for (std::size_t c = 0; c < dy; ++c)
            next[c] = by_target[c]->predict(get, static_cast<long>(k));
        for (std::size_t c = 0; c < dy; ++c) {
            out[c][k] = next[c];
            ty[c].data.push_back(next[c]);
        }
    }
    return out;
}

[[nodiscard]] inline std::vector<double> free_run_simulate(const NarxModel& model,
                                                           const std::vector<double>& u,
                                                           const std::vector<double>& d,
                                                           const InitialHistory& init) {
    std::vector<std::vector<double>> uu{u};
    std::vector<std::vector<double>> dd;
    if (model.delays().disturbance_count() > 0)
        dd.push_back(d);
    InitialHistory h = init;
    if (model.delays().disturbance_count() == 0)
        h.d.clear();
    return free_run_simulate(std::span<const NarxModel>(&model, 1), uu, dd, h).front();
}

/// Free-run prediction over a measured dataset. The first max-delay samples of
/// the measured outputs seed the simulation; the returned series have the
/// dataset's length with those seed samples copied verbatim.
[[nodiscard]] inline std::vector<std::vector<double>>
free_run_on_dataset(std::span<const NarxModel> models, const TimeSeriesDataset& data,
                    std::size_t* seed_length = nullptr) {
    data.validate();
    int maxd = 1;
    for (const auto& m : models)
        maxd = std::max(maxd, m.delays().max_delay());
    const auto s = static_cast<std::size_t>(maxd);
    const std::size_t L = data.length();
    if (L <= s)
        throw InsufficientDataError("dataset too short for free-run prediction");
    if (models.size() != data.y.size())
        throw ShapeError("model count " + std::to_string(models.size()) +
                         " does not match dataset outputs " + std::to_string(data.y.size()));

    InitialHistory init;
    std::vector<std::vector<double>> u, d;
    for (const auto& ch : data.u) {
        init.u.emplace_back(ch.begin(), ch.begin() + static_cast<long>(s - 1));
        u.emplace_back(ch.begin() + static_cast<long>(s - 1), ch.end() - 1);
    }
    for (const auto& ch : data.d) {
        init.d.emplace_back(ch.begin(), ch.begin() + static_cast<long>(s - 1));
        d.emplace_back(ch.begin() + static_cast<long>(s - 1), ch.end() - 1);
    }
    for (const auto& ch : data.y)
        init.y.emplace_back(ch.begin(), ch.begin() + static_cast<long>(s));

    auto pred = free_run_simulate(models, u, d, init);
    std::vector<std::vector<double>> out(data.y.size());
    for (std::size_t c = 0; c < data.y.size(); ++c) {
        out[c].assign(data.y[c].begin(), data.y[c].begin() + static_cast<long>(s));
        out[c].insert(out[c].end(), pred[c].begin(), pred[c].end());
    }
    if (seed_length)
        *seed_length = s;
    return out;
}

[[nodiscard]] inline double rmse(std::span<const double> predicted, std::span<const double> reference) {
    if (predicted.empty())
        throw InsufficientDataError("rmse of an empty series");
    if (predicted.size() != reference.size())
        throw ShapeError("rmse: series lengths differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - reference[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(predicted.size()));
}

} // namespace lmnff
