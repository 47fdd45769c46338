#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "narx.hpp"

namespace lmnff {

enum class LpvKind { Siso, SisoDisturbance, Mimo };

[[nodiscard]] inline const char* to_string(LpvKind kind) {
    switch (kind) {
    case LpvKind::Siso: return "siso";
    case LpvKind::SisoDisturbance: return "siso_disturbance";
    default: return "mimo";
    }
}

/// A state entry holding signal `kind`/`channel` at time k - lag.
struct StateSlot {
    SignalKind kind;
    std::size_t channel;
    int lag;
};

/// Constant matrices of one local model (Eq. form x+ = A x + B u + Bd d + o).
struct PerModelMatrices {
    MatrixXd A;
    MatrixXd B;
    MatrixXd Bd;
    VectorXd offset;
};

/// Matrices scheduled at one validity vector.
struct ScheduledMatrices {
    MatrixXd A;
    MatrixXd B;
    MatrixXd Bd;
    VectorXd offset;
};

/// Convex combination of per-model matrices; phi must lie on the simplex.
[[nodiscard]] inline ScheduledMatrices assemble(const VectorXd& phi,
                                                const std::vector<PerModelMatrices>& per_model) {
    if (per_model.empty() || static_cast<std::size_t>(phi.size()) != per_model.size())
        throw ShapeError("validity vector length does not match the number of local models");
    constexpr double tol = 1e-9;
    if (std::abs(phi.sum() - 1.0) > tol || phi.minCoeff() < -tol || phi.maxCoeff() > 1.0 + tol)
        throw ShapeError("validity vector is not on the simplex");
    ScheduledMatrices s{MatrixXd::Zero(per_model[0].A.rows(), per_model[0].A.cols()),
                        MatrixXd::Zero(per_model[0].B.rows(), per_model[0].B.cols()),
                        MatrixXd::Zero(per_model[0].Bd.rows(), per_model[0].Bd.cols()),
                        VectorXd::Zero(per_model[0].offset.size())};
    for (std::size_t i = 0; i < per_model.size(); ++i) {
        const double w = phi[static_cast<Eigen::Index>(i)];
        s.A += w * per_model[i].A;
        s.B += w * per_model[i].B;
        s.Bd += w * per_model[i].Bd;
        s.offset += w * per_model[i].offset;
    }
    return s;
}

/// LPV state-space form of one or more NARX local model networks.
///
/// State layout: every input block (u_j(k-nu_j+1) .. u_j(k-1)), then every
/// disturbance block (d_j(k-nd_j+1) .. d_j(k-1)), then every output block
/// (y_j(k-ny_j+1) .. y_j(k)); oldest sample first within a block. All rows
/// except the output rows are a fixed shift pattern; each output row carries
/// the validity-weighted parameters of the network predicting that output.
/// The combined validity vector concatenates the per-network validities in
/// output order.
class LpvStateSpace {
public:
    struct ValiditySource {
        SignalKind kind;
        std::size_t channel;
        int lag;
        long slot; // state index, or -1 when the value is the current input/disturbance
    };

    /// Parameters of the network predicting one output channel.
    struct OutputGroup {
        std::size_t output = 0;
        std::size_t row = 0;
        NarxModel model;
        std::vector<VectorXd> a_rows;
        std::vector<VectorXd> b_rows;
        std::vector<VectorXd> bd_rows;
        std::vector<double> offsets;
        std::vector<ValiditySource> validity_sources;
    };

    LpvStateSpace(std::vector<NarxModel> models, LpvKind kind) : kind_(kind) {
        if (models.empty())
            throw ShapeError("state-space transform needs at least one model");
        du_ = models.front().delays().input_count();
        dd_ = models.front().delays().disturbance_count();
        dy_ = models.front().delays().output_count();
        for (const auto& m : models)
            if (m.delays().input_count() != du_ || m.delays().disturbance_count() != dd_ ||
                m.delays().output_count() != dy_)
                throw ShapeError("models disagree on input/disturbance/output arity");
        if (models.size() != dy_)
            throw ShapeError("need exactly one model per output channel (" + std::to_string(dy_) +
                             "), got " + std::to_string(models.size()));
        std::vector<bool> seen(dy_, false);
        for (const auto& m : models) {
            if (seen[m.target()])
                throw ShapeError("two models predict output " + std::to_string(m.target()));
            seen[m.target()] = true;
        }
        std::sort(models.begin(), models.end(),
                  [](const NarxModel& a, const NarxModel& b) { return a.target() < b.target(); });

        nu_.assign(du_, 0);
        nd_.assign(dd_, 0);
        ny_.assign(dy_, 1);
        for (const auto& m : models) {
            const auto& dl = m.delays();
            for (std::size_t j = 0; j < du_; ++j)
                nu_[j] = std::max(nu_[j], dl.inputs[j].max_delay());
            for (std::size_t j = 0; j < dd_; ++j)
                nd_[j] = std::max(nd_[j], dl.disturbances[j].max_delay());
            for (std::size_t j = 0; j < dy_; ++j)
                ny_[j] = std::max(ny_[j], dl.outputs[j].max_delay());
        }

        for (std::size_t j = 0; j < du_; ++j)
            for (int lag = nu_[j] - 1; lag >= 1; --lag)
                layout_.push_back({SignalKind::Input, j, lag});
        for (std::size_t j = 0; j < dd_; ++j)
            for (int lag = nd_[j] - 1; lag >= 1; --lag)
                layout_.push_back({SignalKind::Disturbance, j, lag});
        for (std::size_t j = 0; j < dy_; ++j)
            for (int lag = ny_[j] - 1; lag >= 0; --lag)
                layout_.push_back({SignalKind::Output, j, lag});

        const auto n = static_cast<Eigen::Index>(layout_.size());
        A0_ = MatrixXd::Zero(n, n);
        B0_ = MatrixXd::Zero(n, static_cast<Eigen::Index>(du_));
        Bd0_ = MatrixXd::Zero(n, static_cast<Eigen::Index>(dd_));
        C_ = MatrixXd::Zero(static_cast<Eigen::Index>(dy_), n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto& s = layout_[static_cast<std::size_t>(r)];
            if (s.kind == SignalKind::Output && s.lag == 0) {
                C_(static_cast<Eigen::Index>(s.channel), r) = 1.0;
                continue; // parameter row
            }
            // next value at lag m is the current value at lag m - 1
            if (s.lag - 1 >= 1 || s.kind == SignalKind::Output)
                A0_(r, slot(s.kind, s.channel, s.lag - 1)) = 1.0;
            else if (s.kind == SignalKind::Input)
                B0_(r, static_cast<Eigen::Index>(s.channel)) = 1.0;
            else
                Bd0_(r, static_cast<Eigen::Index>(s.channel)) = 1.0;
        }

        for (auto& m : models) {
            OutputGroup g;
            g.output = m.target();
            g.row = static_cast<std::size_t>(slot(SignalKind::Output, g.output, 0));
            const auto& net = m.net();
            for (std::size_t i = 0; i < net.size(); ++i) {
                VectorXd a = VectorXd::Zero(n);
                VectorXd b = VectorXd::Zero(static_cast<Eigen::Index>(du_));
                VectorXd bd = VectorXd::Zero(static_cast<Eigen::Index>(dd_));
                const auto& lm = net.model(i);
                for (std::size_t t = 0; t < m.lin_layout().size(); ++t) {
                    const auto& term = m.lin_layout()[t];
                    const double w = lm.gains[static_cast<Eigen::Index>(t)];
                    if (term.kind != SignalKind::Output && term.lag() == 0) {
                        if (term.kind == SignalKind::Input)
                            b[static_cast<Eigen::Index>(term.channel)] += w;
                        else
                            bd[static_cast<Eigen::Index>(term.channel)] += w;
                    } else {
                        a[slot(term.kind, term.channel, term.lag())] += w;
                    }
                }
                g.a_rows.push_back(std::move(a));
                g.b_rows.push_back(std::move(b));
                g.bd_rows.push_back(std::move(bd));
                g.offsets.push_back(lm.offset);
            }
            for (const auto& term : m.val_layout()) {
                ValiditySource src{term.kind, term.channel, term.lag(), -1};
                if (term.kind == SignalKind::Output || term.lag() > 0)
                    src.slot = slot(term.kind, term.channel, term.lag());
                g.validity_sources.push_back(src);
            }
            g.model = std::move(m);
            groups_.push_back(std::move(g));
        }
    }

    [[nodiscard]] LpvKind kind() const { return kind_; }
    [[nodiscard]] std::size_t state_dim() const { return layout_.size(); }
    [[nodiscard]] std::size_t input_count() const { return du_; }
    [[nodiscard]] std::size_t disturbance_count() const { return dd_; }
    [[nodiscard]] std::size_t output_count() const { return dy_; }
    [[nodiscard]] const std::vector<StateSlot>& layout() const { return layout_; }
    [[nodiscard]] const std::vector<OutputGroup>& groups() const { return groups_; }
    [[nodiscard]] const MatrixXd& shift_matrix() const { return A0_; }
    [[nodiscard]] const MatrixXd& output_matrix() const { return C_; }
    [[nodiscard]] int max_input_delay(std::size_t j) const { return nu_.at(j); }
    [[nodiscard]] int max_disturbance_delay(std::size_t j) const { return nd_.at(j); }
    [[nodiscard]] int max_output_delay(std::size_t j) const { return ny_.at(j); }

    [[nodiscard]] std::size_t validity_count() const {
        std::size_t k = 0;
        for (const auto& g : groups_)
            k += g.a_rows.size();
        return k;
    }

    /// State index of signal `kind`/`channel` at lag, or -1 when not stored.
    [[nodiscard]] Eigen::Index find_slot(SignalKind kind, std::size_t channel, int lag) const {
        for (std::size_t i = 0; i < layout_.size(); ++i)
            if (layout_[i].kind == kind && layout_[i].channel == channel && layout_[i].lag == lag)
                return static_cast<Eigen::Index>(i);
        return -1;
    }

    /// Full per-model matrices of the network predicting `output` (SISO: the
    /// only network). The shift rows are shared; other output rows are zero.
    [[nodiscard]] std::vector<PerModelMatrices> per_model(std::size_t output = 0) const {
        const auto& g = group(output);
        std::vector<PerModelMatrices> out;
        const auto row = static_cast<Eigen::Index>(g.row);
        for (std::size_t i = 0; i < g.a_rows.size(); ++i) {
            PerModelMatrices p{A0_, B0_, Bd0_, VectorXd::Zero(A0_.rows())};
            p.A.row(row) = g.a_rows[i].transpose();
            p.B.row(row) = g.b_rows[i].transpose();
            p.Bd.row(row) = g.bd_rows[i].transpose();
            p.offset[row] = g.offsets[i];
            out.push_back(std::move(p));
        }
        return out;
    }

    /// Combined validity vector at state x with current input u and disturbance d.
    [[nodiscard]] VectorXd validities(const VectorXd& x, const VectorXd& u, const VectorXd& d) const {
        VectorXd phi(static_cast<Eigen::Index>(validity_count()));
        Eigen::Index off = 0;
        for (const auto& g : groups_) {
            VectorXd xv(static_cast<Eigen::Index>(g.validity_sources.size()));
            for (std::size_t r = 0; r < g.validity_sources.size(); ++r) {
                const auto& s = g.validity_sources[r];
                double v;
                if (s.slot >= 0)
                    v = x[s.slot];
                else if (s.kind == SignalKind::Input)
                    v = u[static_cast<Eigen::Index>(s.channel)];
                else
                    v = d[static_cast<Eigen::Index>(s.channel)];
                xv[static_cast<Eigen::Index>(r)] = v;
            }
            const VectorXd w = g.model.net().validity_weights(xv);
            phi.segment(off, w.size()) = w;
            off += w.size();
        }
        return phi;
    }

    /// A(phi), B(phi), Bd(phi), o(phi) for a combined validity vector.
    [[nodiscard]] ScheduledMatrices assemble(const VectorXd& phi) const {
        if (static_cast<std::size_t>(phi.size()) != validity_count())
            throw ShapeError("combined validity vector has wrong length");
        ScheduledMatrices s{A0_, B0_, Bd0_, VectorXd::Zero(A0_.rows())};
        Eigen::Index off = 0;
        for (const auto& g : groups_) {
            const auto row = static_cast<Eigen::Index>(g.row);
            const auto K = static_cast<Eigen::Index>(g.a_rows.size());
            const VectorXd seg = phi.segment(off, K);
            constexpr double tol = 1e-9;
            if (std::abs(seg.sum() - 1.0) > tol || seg.minCoeff() < -tol)
                throw ShapeError("validity vector of output " + std::to_string(g.output) +
                                 " is not on the simplex");
            for (Eigen::Index i = 0; i < K; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                s.A.row(row) += seg[i] * g.a_rows[ii].transpose();
                s.B.row(row) += seg[i] * g.b_rows[ii].transpose();
                s.Bd.row(row) += seg[i] * g.bd_rows[ii].transpose();
                s.offset[row] += seg[i] * g.offsets[ii];
            }
            off += K;
        }
        return s;
    }

    [[nodiscard]] VectorXd step(const VectorXd& x, const VectorXd& u, const VectorXd& d) const {
        const auto m = assemble(validities(x, u, d));
        VectorXd next = m.A * x + m.B * u + m.offset;
        if (dd_ > 0)
            next += m.Bd * d;
        return next;
    }

    [[nodiscard]] VectorXd output(const VectorXd& x) const { return C_ * x; }

    /// State at time k from signal samples: get(kind, channel, t).
    template <class Getter>
    [[nodiscard]] VectorXd state_from(const Getter& get, long k) const {
        VectorXd x(static_cast<Eigen::Index>(layout_.size()));
        for (std::size_t i = 0; i < layout_.size(); ++i)
            x[static_cast<Eigen::Index>(i)] =
                get(layout_[i].kind, layout_[i].channel, k - layout_[i].lag);
        return x;
    }

    /// Iterates the state equation; returns y(1..L) per output channel.
    [[nodiscard]] std::vector<std::vector<double>>
    rollout(VectorXd x, const std::vector<std::vector<double>>& u,
            const std::vector<std::vector<double>>& d) const {
        if (u.size() != du_ || d.size() != dd_)
            throw ShapeError("rollout signal arity does not match the state space");
        const std::size_t L = du_ > 0 ? u.front().size() : (dd_ > 0 ? d.front().size() : 0);
        std::vector<std::vector<double>> y(dy_, std::vector<double>(L));
        VectorXd uk(static_cast<Eigen::Index>(du_)), dk(static_cast<Eigen::Index>(dd_));
        for (std::size_t k = 0; k < L; ++k) {
            for (std::size_t j = 0; j < du_; ++j)
                uk[static_cast<Eigen::Index>(j)] = u[j].at(k);
            for (std::size_t j = 0; j < dd_; ++j)
                dk[static_cast<Eigen::Index>(j)] = d[j].at(k);
            x = step(x, uk, dk);
            const VectorXd yk = output(x);
            for (std::size_t j = 0; j < dy_; ++j)
                y[j][k] = yk[static_cast<Eigen::Index>(j)];
        }
        return y;
    }

    [[nodiscard]] const OutputGroup& group(std::size_t output) const {
        for (const auto& g : groups_)
            if (g.output == output)
                return g;
        throw ShapeError("no network predicts output " + std::to_string(output));
    }

private:
    [[nodiscard]] Eigen::Index slot(SignalKind kind, std::size_t channel, int lag) const {
        const Eigen::Index i = find_slot(kind, channel, lag);
        if (i < 0)
            throw ShapeError("state layout has no slot for the requested delayed signal");
        return i;
    }

    LpvKind kind_;
    std::size_t du_ = 0, dd_ = 0, dy_ = 0;
    std::vector<int> nu_, nd_, ny_;
    std::vector<StateSlot> layout_;
    MatrixXd A0_, B0_, Bd0_, C_;
    std::vector<OutputGroup> groups_;
};

[[nodiscard]] inline LpvStateSpace to_lpv_siso(const NarxModel& model) {
    const auto& dl = model.delays();
    if (dl.input_count() != 1 || dl.output_count() != 1)
        throw WrongKindError("SISO transform needs exactly one input and one output");
    if (dl.max_delay(SignalKind::Disturbance) > 0)
        throw WrongKindError("model has disturbance delays; use the disturbance transform");
    NarxModel m = model;
    if (dl.disturbance_count() > 0) {
        DelayConfig stripped = dl;
        stripped.disturbances.clear();
        m = NarxModel(model.net(), stripped, model.target());
    }
    return LpvStateSpace({m}, LpvKind::Siso);
}

[[nodiscard]] inline LpvStateSpace to_lpv_disturbance(const NarxModel& model) {
    const auto& dl = model.delays();
    if (dl.input_count() != 1 || dl.output_count() != 1)
        throw WrongKindError("disturbance transform needs exactly one input and one output");
    if (dl.max_delay(SignalKind::Disturbance) == 0)
        throw WrongKindError("model has no disturbance delays");
    return LpvStateSpace({model}, LpvKind::SisoDisturbance);
}

/// One network per output; all networks share the same input, disturbance and
/// output arity. Maximum delays are taken over all networks.
[[nodiscard]] inline LpvStateSpace to_lpv_mimo(std::vector<NarxModel> models) {
    return LpvStateSpace(std::move(models), LpvKind::Mimo);
}

} // namespace lmnff
