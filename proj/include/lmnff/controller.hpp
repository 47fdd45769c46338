#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "stability.hpp"

namespace lmnff {

namespace detail {

/// Bounded history of one scalar signal, addressed by absolute time.
class SignalHistory {
public:
    SignalHistory() = default;
    explicit SignalHistory(std::size_t capacity) : cap_(std::max<std::size_t>(capacity, 1)) {}

    void fill(double value, long last) {
        buf_.assign(cap_, value);
        last_ = last;
    }
    void push(double value) {
        buf_.push_back(value);
        ++last_;
        while (buf_.size() > cap_)
            buf_.pop_front();
    }
    /// Replaces the sample at time `last` or appends it as the next one.
    void set_last(double value, long t) {
        if (t == last_)
            buf_.back() = value;
        else if (t == last_ + 1)
            push(value);
        else
            throw ShapeError("signal history updated out of order");
    }
    [[nodiscard]] long last() const { return last_; }
    [[nodiscard]] double at(long t) const {
        const long back = last_ - t;
        if (back < 0 || back >= static_cast<long>(buf_.size()))
            throw InsufficientDataError("controller history has no sample at time " +
                                        std::to_string(t));
        return buf_[buf_.size() - 1 - static_cast<std::size_t>(back)];
    }

private:
    std::deque<double> buf_;
    std::size_t cap_ = 1;
    long last_ = -1;
};

} // namespace detail

/// Feedforward controller obtained by inverting an LPV model over its
/// relative degree. The desired output is the reference delayed by
/// delta + 1 samples; u(k) makes the model output hit it exactly whenever the
/// instantaneous gain is invertible.
class FeedforwardController {
public:
    FeedforwardController(LpvStateSpace model, int delta) : ss_(std::move(model)), delta_(delta) {
        if (delta_ < 1)
            throw AssumptionError("relative degree must be at least one");
        const std::size_t dd = ss_.disturbance_count();
        dist_delta_.assign(dd, std::numeric_limits<int>::max());
        for (const auto& g : ss_.groups())
            for (std::size_t c = 0; c < dd; ++c) {
                const auto& s = g.model.delays().disturbances[c];
                if (!s.lin.empty())
                    dist_delta_[c] = std::min(dist_delta_[c], s.lin.front());
            }
        reset(VectorXd::Zero(static_cast<Eigen::Index>(ss_.output_count())),
              VectorXd::Zero(static_cast<Eigen::Index>(dd)));
        started_ = false;
    }

    [[nodiscard]] const LpvStateSpace& model() const { return ss_; }
    [[nodiscard]] LpvKind kind() const { return ss_.kind(); }
    [[nodiscard]] int relative_degree() const { return delta_; }
    /// Delay between the reference and the desired output.
    [[nodiscard]] int shift() const { return delta_ + 1; }
    /// Disturbance relative degree per channel (INT_MAX when the channel is unused).
    [[nodiscard]] const std::vector<int>& disturbance_relative_degree() const { return dist_delta_; }
    [[nodiscard]] long time() const { return k_; }
    [[nodiscard]] double last_residual() const { return residual_; }
    [[nodiscard]] const VectorXd& last_desired_state() const { return x_des_; }

    /// Warm start: desired outputs at the first reference sample, inputs at
    /// zero, past disturbances at d0.
    void reset(const VectorXd& v0, const VectorXd& d0) {
        check_size(v0, ss_.output_count(), "reference");
        check_size(d0, ss_.disturbance_count(), "disturbance");
        k_ = 0;
        residual_ = 0.0;
        uh_.clear();
        dh_.clear();
        yh_.clear();
        for (std::size_t j = 0; j < ss_.input_count(); ++j) {
            uh_.emplace_back(static_cast<std::size_t>(std::max(ss_.max_input_delay(j) - 1, 1)));
            uh_.back().fill(0.0, -1);
        }
        for (std::size_t j = 0; j < ss_.disturbance_count(); ++j) {
            dh_.emplace_back(static_cast<std::size_t>(std::max(ss_.max_disturbance_delay(j), 1)));
            dh_.back().fill(d0[static_cast<Eigen::Index>(j)], -1);
        }
        for (std::size_t j = 0; j < ss_.output_count(); ++j) {
            yh_.emplace_back(static_cast<std::size_t>(ss_.max_output_delay(j) + delta_));
            yh_.back().fill(v0[static_cast<Eigen::Index>(j)], delta_ - 1);
        }
        pending_ = v0;
        x_des_ = initial_state();
        started_ = true;
    }

    /// Desired state x_des(0) right after reset; the model-in-loop harness
    /// starts the model from it.
    [[nodiscard]] VectorXd initial_state() const {
        auto get = [&](SignalKind kind, std::size_t c, long t) { return value(kind, c, t, {}); };
        return ss_.state_from(get, 0);
    }

    /// One control step at time k. `reference` is v(k); `disturbance_prev` is
    /// the measured d(k-1). Future disturbances d(k), d(k+1), ... are taken from
    /// `preview` when given, otherwise held at d(k-1).
    VectorXd step(const VectorXd& reference, const VectorXd& disturbance_prev,
                  std::span<const VectorXd> preview = {}) {
        check_size(reference, ss_.output_count(), "reference");
        check_size(disturbance_prev, ss_.disturbance_count(), "disturbance");
        for (const auto& p : preview)
            check_size(p, ss_.disturbance_count(), "disturbance preview");
        if (!started_)
            reset(reference, disturbance_prev);

        for (std::size_t c = 0; c < dh_.size(); ++c)
            dh_[c].set_last(disturbance_prev[static_cast<Eigen::Index>(c)], k_ - 1);
        for (std::size_t c = 0; c < yh_.size(); ++c)
            yh_[c].push(pending_[static_cast<Eigen::Index>(c)]);
        pending_ = reference;

        auto get = [&](SignalKind kind, std::size_t c, long t) { return value(kind, c, t, preview); };
        x_des_ = ss_.state_from(get, k_);

        const auto dd = static_cast<Eigen::Index>(ss_.disturbance_count());
        VectorXd z = x_des_;
        MatrixXd T;
        VectorXd phi0;
        for (int g = 0; g < delta_; ++g) {
            const VectorXd phi = scheduled_validities(k_ + g, get);
            if (g == 0)
                phi0 = phi;
            const auto m = ss_.assemble(phi);
            VectorXd next = m.A * z + m.offset;
            for (Eigen::Index c = 0; c < dd; ++c)
                if (dist_delta_[static_cast<std::size_t>(c)] <= delta_ &&
                    g <= delta_ - dist_delta_[static_cast<std::size_t>(c)])
                    next += m.Bd.col(c) * get(SignalKind::Disturbance, static_cast<std::size_t>(c), k_ + g);
            z = std::move(next);
            T = g == 0 ? m.B : MatrixXd(m.A * T);
        }

        const MatrixXd& C = ss_.output_matrix();
        const MatrixXd G = C * T;
        VectorXd target(static_cast<Eigen::Index>(ss_.output_count()));
        for (std::size_t c = 0; c < yh_.size(); ++c)
            target[static_cast<Eigen::Index>(c)] = yh_[c].at(k_ + delta_);
        const VectorXd r = target - C * z;

        VectorXd u;
        const Eigen::Index dy = G.rows(), du = G.cols();
        if (dy == 1 && du == 1) {
            if (!(std::abs(G(0, 0)) > 1e-12))
                throw SingularityError("instantaneous input gain vanishes at validities " +
                                       format(phi0));
            u = r / G(0, 0);
        } else {
            Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(G);
            cod.setThreshold(1e-12);
            if (dy <= du && cod.rank() < dy)
                throw SingularityError("input gain matrix is singular at validities " + format(phi0));
            u = cod.solve(r);
        }
        if (!u.allFinite())
            throw DivergenceError("control law produced a non-finite input at validities " +
                                   format(phi0));
        residual_ = (G * u - r).norm();

        for (std::size_t j = 0; j < uh_.size(); ++j)
            uh_[j].push(u[static_cast<Eigen::Index>(j)]);
        ++k_;
        return u;
    }

private:
    static void check_size(const VectorXd& v, std::size_t n, const char* what) {
        if (static_cast<std::size_t>(v.size()) != n)
            throw ShapeError(std::string(what) + " has " + std::to_string(v.size()) +
                             " channels, expected " + std::to_string(n));
    }

    static std::string format(const VectorXd& v) {
        std::ostringstream os;
        os << '[';
        for (Eigen::Index i = 0; i < v.size(); ++i)
            os << (i ? ", " : "") << v[i];
        os << ']';
        return os.str();
    }

    [[nodiscard]] double value(SignalKind kind, std::size_t c, long t,
                               std::span<const VectorXd> preview) const {
        switch (kind) {
        case SignalKind::Input:
            if (t >= k_)
                throw UnsupportedError("control law needs a future input value");
            return uh_[c].at(t);
        case SignalKind::Disturbance: {
            if (t < k_)
                return dh_[c].at(t);
            const auto ahead = static_cast<std::size_t>(t - k_);
            if (ahead < preview.size())
                return preview[ahead][static_cast<Eigen::Index>(c)];
            return dh_[c].at(k_ - 1);
        }
        default: return yh_[c].at(t);
        }
    }

    template <class Getter>
    [[nodiscard]] VectorXd scheduled_validities(long tau, const Getter& get) const {
        VectorXd phi(static_cast<Eigen::Index>(ss_.validity_count()));
        Eigen::Index off = 0;
        for (const auto& g : ss_.groups()) {
            VectorXd xv(static_cast<Eigen::Index>(g.validity_sources.size()));
            for (std::size_t r = 0; r < g.validity_sources.size(); ++r) {
                const auto& s = g.validity_sources[r];
                xv[static_cast<Eigen::Index>(r)] = get(s.kind, s.channel, tau - s.lag);
            }
            const VectorXd w = g.model.net().validity_weights(xv);
            phi.segment(off, w.size()) = w;
            off += w.size();
        }
        return phi;
    }

    LpvStateSpace ss_;
    int delta_ = 1;
    std::vector<int> dist_delta_;
    std::vector<detail::SignalHistory> uh_, dh_, yh_;
    VectorXd pending_;
    VectorXd x_des_;
    long k_ = 0;
    double residual_ = 0.0;
    bool started_ = false;
};

/// Derives the feedforward controller of an LPV model.
///
/// Every output must depend on at least one input, every input-output pair
/// that depends on the input must share the relative degree, and no input may
/// enter a validity function. Single-output models additionally need
/// same-sign, nonzero critical gains; multi-output models are checked for an
/// invertible gain matrix at every step instead.
[[nodiscard]] inline FeedforwardController synthesize(const LpvStateSpace& ss) {
    int delta = 0;
    for (const auto& g : ss.groups()) {
        const auto& dl = g.model.delays();
        bool any = false;
        for (std::size_t j = 0; j < dl.input_count(); ++j) {
            const auto& s = dl.inputs[j];
            if (!s.val.empty())
                throw UnsupportedError("input " + std::to_string(j) +
                                       " enters a validity function; the control law would be implicit");
            if (s.lin.empty())
                continue;
            any = true;
            const int dj = s.lin.front();
            if (delta == 0)
                delta = dj;
            else if (dj != delta)
                throw AssumptionError("mixed relative degrees across input-output pairs (" +
                                      std::to_string(delta) + " vs " + std::to_string(dj) + ")");
        }
        if (!any)
            throw AssumptionError("output " + std::to_string(g.output) +
                                  " does not depend on any input");
    }
    if (ss.output_count() == 1 && ss.input_count() == 1) {
        const auto sc = same_sign_check(ss.groups().front().model, delta);
        if (!sc.ok)
            throw AssumptionError("relative degree is not well defined: " + sc.reason);
    }
    return FeedforwardController(ss, delta);
}

struct TrackingReport {
    std::vector<std::vector<double>> u;      // u(0..L-1) per input
    std::vector<std::vector<double>> y;      // y(1..L) per output
    std::vector<std::vector<double>> y_des;  // y_des(1..L) per output
    std::vector<double> rmse;                // per output over k >= shift
    std::vector<double> residuals;           // least-squares residual per step
    std::size_t transient = 0;
};

/// Runs the controller against the model it was derived from. `reference`
/// holds v(0..L-1) per output; `disturbance` d(0..L-1) per channel. With
/// `preview` the controller sees the true future disturbances.
[[nodiscard]] inline TrackingReport
model_in_loop_tracking(FeedforwardController& ctrl, const LpvStateSpace& model,
                       const std::vector<std::vector<double>>& reference,
                       const std::vector<std::vector<double>>& disturbance = {}, bool preview = true) {
    const std::size_t dy = model.output_count(), du = model.input_count(),
                      dd = model.disturbance_count();
    if (reference.size() != dy)
        throw ShapeError("reference has " + std::to_string(reference.size()) +
                         " channels, model has " + std::to_string(dy) + " outputs");
    if (disturbance.size() != dd)
        throw ShapeError("disturbance has " + std::to_string(disturbance.size()) +
                         " channels, model has " + std::to_string(dd));
    const std::size_t L = reference.front().size();
    for (const auto& r : reference)
        if (r.size() != L)
            throw ShapeError("reference channels differ in length");
    for (const auto& d : disturbance)
        if (d.size() != L)
            throw ShapeError("disturbance length differs from the reference");
    const auto shift = static_cast<std::size_t>(ctrl.shift());
    if (L <= shift)
        throw InsufficientDataError("reference must be longer than the shift of " +
                                    std::to_string(shift) + " samples");

    auto column = [](const std::vector<std::vector<double>>& s, std::size_t k) {
        VectorXd v(static_cast<Eigen::Index>(s.size()));
        for (std::size_t c = 0; c < s.size(); ++c)
            v[static_cast<Eigen::Index>(c)] = s[c][k];
        return v;
    };

    TrackingReport rep;
    rep.transient = shift;
    rep.u.assign(du, std::vector<double>(L));
    rep.y.assign(dy, std::vector<double>(L));
    rep.y_des.assign(dy, std::vector<double>(L));
    const VectorXd d0 = dd ? column(disturbance, 0) : VectorXd();
    ctrl.reset(column(reference, 0), d0);
    VectorXd x = ctrl.initial_state();
    const auto delta = static_cast<std::size_t>(ctrl.relative_degree());
    std::vector<VectorXd> future;
    for (std::size_t k = 0; k < L; ++k) {
        const VectorXd dprev = dd ? column(disturbance, k == 0 ? 0 : k - 1) : VectorXd();
        future.clear();
        if (preview && dd)
            for (std::size_t g = 0; g < delta; ++g)
                future.push_back(column(disturbance, std::min(k + g, L - 1)));
        const VectorXd u = ctrl.step(column(reference, k), dprev, future);
        rep.residuals.push_back(ctrl.last_residual());
        x = model.step(x, u, dd ? column(disturbance, k) : VectorXd());
        const VectorXd y = model.output(x);
        for (std::size_t j = 0; j < du; ++j)
            rep.u[j][k] = u[static_cast<Eigen::Index>(j)];
        for (std::size_t c = 0; c < dy; ++c) {
            rep.y[c][k] = y[static_cast<Eigen::Index>(c)];
            // y_des(k+1) = v(k - delta)
            rep.y_des[c][k] = k >= delta ? reference[c][k - delta] : reference[c][0];
        }
    }
    for (std::size_t c = 0; c < dy; ++c) {
        // y(k) for k >= shift sits at index k-1
        std::span<const double> y(rep.y[c]), yd(rep.y_des[c]);
        rep.rmse.push_back(rmse(y.subspan(shift - 1), yd.subspan(shift - 1)));
    }
    return rep;
}

} // namespace lmnff
