#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "stability.hpp"

namespace lmnff {

/// Weighted ridge least squares for one affine local model. The offset is
/// not penalized.
[[nodiscard]] inline LocalLinearModel local_wls(const MatrixXd& x, const VectorXd& target,
                                                const VectorXd& weights, double ridge) {
    if (x.rows() == 0)
        throw InsufficientDataError("local estimation needs at least one row");
    if (target.size() != x.rows() || weights.size() != x.rows())
        throw ShapeError("local estimation: rows, targets and weights differ in length");
    if (ridge < 0.0)
        throw ShapeError("ridge must be nonnegative");
    if ((weights.array() < 0.0).any() || !weights.allFinite())
        throw ShapeError("weights must be finite and nonnegative");
    const double wsum = weights.sum();
    if (!(wsum > 0.0))
        throw ShapeError("weights are all zero");

    const VectorXd xbar = (x.transpose() * weights) / wsum;
    const double ybar = weights.dot(target) / wsum;
    const MatrixXd xc = x.rowwise() - xbar.transpose();
    const VectorXd yc = target.array() - ybar;
    const MatrixXd wx = xc.array().colwise() * weights.array();
    MatrixXd normal = wx.transpose() * xc;
    normal.diagonal().array() += ridge;
    const VectorXd rhs = wx.transpose() * yc;

    LocalLinearModel m;
    if (x.cols() == 0) {
        m.gains = VectorXd(0);
        m.offset = ybar;
        return m;
    }
    Eigen::LLT<MatrixXd> llt(normal);
    const bool ok = llt.info() == Eigen::Success && llt.rcond() >= 1e-14;
    if (!ok) {
        if (ridge == 0.0)
            throw RankDeficiencyError("local least-squares system is singular or ill-conditioned; "
                                      "use ridge > 0");
        Eigen::LDLT<MatrixXd> ldlt(normal);
        m.gains = ldlt.solve(rhs);
    } else {
        m.gains = llt.solve(rhs);
    }
    m.offset = ybar - xbar.dot(m.gains);
    return m;
}

struct LolimotConfig {
    std::size_t max_models = 32;
    double width_factor = 1.0 / 3.0;
    double ridge = 1e-8;
    double min_points = 0.0; // effective samples per child; 0 selects lin_dim + 1
};

/// Axis-aligned hyperrectangles, one per local model.
struct Partition {
    std::vector<VectorXd> lower;
    std::vector<VectorXd> upper;

    [[nodiscard]] std::size_t size() const { return lower.size(); }
};

[[nodiscard]] inline ValidityFunction validity_from_box(const VectorXd& lower, const VectorXd& upper,
                                                        double width_factor) {
    ValidityFunction v;
    v.centers = 0.5 * (lower + upper);
    v.widths = width_factor * 0.5 * (upper - lower);
    for (Eigen::Index d = 0; d < v.widths.size(); ++d)
        if (!(v.widths[d] > 0.0))
            v.widths[d] = 1.0;
    return v;
}

struct LolimotResult {
    LocalModelNetwork net;
    Partition partition;
    std::vector<double> error_history; // global mean squared error after each accepted step
};

namespace detail {

/// Normalized validities of all rows for a set of rectangles.
inline MatrixXd validity_matrix(const MatrixXd& x_val, const Partition& p, double width_factor) {
    const auto n = x_val.rows();
    const auto K = static_cast<Eigen::Index>(p.size());
    MatrixXd logs(n, K);
    for (Eigen::Index i = 0; i < K; ++i) {
        const auto v = validity_from_box(p.lower[static_cast<std::size_t>(i)],
                                         p.upper[static_cast<std::size_t>(i)], width_factor);
        const MatrixXd z =
            (x_val.rowwise() - v.centers.transpose()).array().rowwise() / v.widths.transpose().array();
        logs.col(i) = -0.5 * z.rowwise().squaredNorm();
    }
    const VectorXd top = logs.rowwise().maxCoeff();
    MatrixXd w = (logs.colwise() - top).array().exp().matrix();
    const VectorXd s = w.rowwise().sum();
    return w.array().colwise() / s.array();
}

inline VectorXd local_predictions(const MatrixXd& x_lin, const LocalLinearModel& m) {
    return (x_lin * m.gains).array() + m.offset;
}

} // namespace detail

/// Greedy tree construction. `lower`/`upper` bound the validity inputs.
[[nodiscard]] inline LolimotResult lolimot_fit(const RegressorSet& data, const VectorXd& lower,
                                               const VectorXd& upper, const LolimotConfig& cfg = {}) {
    const auto n = static_cast<Eigen::Index>(data.rows());
    if (n == 0)
        throw InsufficientDataError("no training data");
    if (data.x_lin.rows() != n || data.x_val.rows() != n)
        throw ShapeError("regressor matrices and targets differ in length");
    if (cfg.max_models < 1)
        throw ShapeError("max_models must be at least 1");
    if (!(cfg.width_factor > 0.0))
        throw ShapeError("width_factor must be positive");
    const auto val_dim = data.x_val.cols();
    if (lower.size() != val_dim || upper.size() != val_dim)
        throw ShapeError("bounding box does not match the validity dimension");
    if (val_dim == 0 && cfg.max_models > 1)
        throw UnsupportedError("cannot split without validity inputs (val_dim = 0)");

    const auto lin_dim = static_cast<std::size_t>(data.x_lin.cols());
    const double min_points =
        cfg.min_points > 0.0 ? cfg.min_points : static_cast<double>(lin_dim + 1);

    LolimotResult res;
    res.partition.lower.push_back(lower);
    res.partition.upper.push_back(upper);
    std::vector<LocalLinearModel> models{
        local_wls(data.x_lin, data.target, VectorXd::Ones(n), cfg.ridge)};

    MatrixXd phi = detail::validity_matrix(data.x_val, res.partition, cfg.width_factor);
    auto predict = [&](const MatrixXd& w, const std::vector<LocalLinearModel>& ms) {
        VectorXd y = VectorXd::Zero(n);
        for (std::size_t i = 0; i < ms.size(); ++i)
            y += w.col(static_cast<Eigen::Index>(i)).cwiseProduct(detail::local_predictions(data.x_lin, ms[i]));
        return y;
    };
    VectorXd resid = data.target - predict(phi, models);
    double err = resid.squaredNorm() / static_cast<double>(n);
    res.error_history.push_back(err);

    while (models.size() < cfg.max_models) {
        // local error per model
        std::vector<std::pair<double, std::size_t>> order;
        const VectorXd r2 = resid.cwiseAbs2();
        for (std::size_t i = 0; i < models.size(); ++i)
            order.emplace_back(phi.col(static_cast<Eigen::Index>(i)).dot(r2), i);
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });

        bool accepted = false;
        for (const auto& [local_err, worst] : order) {
            double best_err = err;
            Partition best_part;
            std::vector<LocalLinearModel> best_models;
            MatrixXd best_phi;
            for (Eigen::Index dim = 0; dim < val_dim; ++dim) {
                const VectorXd& lo = res.partition.lower[worst];
                const VectorXd& hi = res.partition.upper[worst];
                if (!(hi[dim] > lo[dim]))
                    continue;
                const double mid = 0.5 * (lo[dim] + hi[dim]);
                Partition cand = res.partition;
                cand.upper[worst][dim] = mid;
                cand.lower.push_back(lo);
                cand.upper.push_back(hi);
                cand.lower.back()[dim] = mid;
                const MatrixXd w = detail::validity_matrix(data.x_val, cand, cfg.width_factor);
                const Eigen::Index a = static_cast<Eigen::Index>(worst);
                const Eigen::Index b = static_cast<Eigen::Index>(cand.size() - 1);
                if (w.col(a).sum() < min_points || w.col(b).sum() < min_points)
                    continue;
                std::vector<LocalLinearModel> ms = models;
                try {
                    ms[worst] = local_wls(data.x_lin, data.target, w.col(a), cfg.ridge);
                    ms.push_back(local_wls(data.x_lin, data.target, w.col(b), cfg.ridge));
                } catch (const RankDeficiencyError&) {
                    continue;
                }
                const double e = (data.target - predict(w, ms)).squaredNorm() / static_cast<double>(n);
                if (e < best_err) {
                    best_err = e;
                    best_part = std::move(cand);
                    best_models = std::move(ms);
                    best_phi = w;
                }
            }
            if (!best_models.empty()) {
                res.partition = std::move(best_part);
                models = std::move(best_models);
                phi = std::move(best_phi);
                resid = data.target - predict(phi, models);
                err = best_err;
                res.error_history.push_back(err);
                accepted = true;
                break;
            }
        }
        if (!accepted)
            break;
    }

    std::vector<ValidityFunction> vals;
    for (std::size_t i = 0; i < res.partition.size(); ++i)
        vals.push_back(validity_from_box(res.partition.lower[i], res.partition.upper[i], cfg.width_factor));
    res.net = LocalModelNetwork(std::move(models), std::move(vals), lin_dim,
                                static_cast<std::size_t>(val_dim));
    return res;
}

/// Bounding box taken from the data.
[[nodiscard]] inline LolimotResult lolimot_fit(const RegressorSet& data, const LolimotConfig& cfg = {}) {
    if (data.rows() == 0)
        throw InsufficientDataError("no training data");
    return lolimot_fit(data, data.x_val.colwise().minCoeff().transpose(),
                       data.x_val.colwise().maxCoeff().transpose(), cfg);
}

/// Trains a NARX model for one output channel of a dataset.
[[nodiscard]] inline NarxModel train_narx(const TimeSeriesDataset& data, const DelayConfig& delays,
                                          const LolimotConfig& cfg = {}, std::size_t target = 0,
                                          std::vector<double>* error_history = nullptr) {
    DelayConfig dl = delays;
    dl.normalize();
    const auto set = build_regressors(data, dl, target);
    auto fit = lolimot_fit(set, cfg);
    if (error_history)
        *error_history = fit.error_history;
    return NarxModel(std::move(fit.net), std::move(dl), target);
}

/// Normalized RMSE: rmse / standard deviation of the reference.
[[nodiscard]] inline double nrmse(std::span<const double> predicted, std::span<const double> reference) {
    const double e = rmse(predicted, reference);
    const double mean = std::accumulate(reference.begin(), reference.end(), 0.0) /
                        static_cast<double>(reference.size());
    double var = 0.0;
    for (double v : reference)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(reference.size());
    return var > 0.0 ? e / std::sqrt(var) : e;
}

// ----------------------------------------------------------------------------
// Fine-tuning for certifiability
// ----------------------------------------------------------------------------

struct FineTuneConfig {
    int sign = +1;                 // target sign of the critical input gains
    double sign_margin = 0.05;     // s * b_1 >= sign_margin
    double hinge_weight = 1.0;
    double stability_margin = 0.05;
    int max_iterations = 5000;
    LmiOptions lmi;
};

struct FineTuneResult {
    NarxModel model;
    int iterations = 0;
    double mse_before = 0.0;
    double mse_after = 0.0;
    double penalty = 0.0;
    Verdict verdict = Verdict::NotCertified;
};

namespace detail {

struct TuneProblem {
    MatrixXd z;          // blended design, n x K(p+1)
    VectorXd target;
    std::size_t K = 0, p = 0;
    long b1 = -1;        // gain index of the critical delay
    std::vector<long> tail; // gain indices of the remaining input delays
};

inline VectorXd pack(const LocalModelNetwork& net) {
    const auto p = static_cast<Eigen::Index>(net.lin_dim());
    VectorXd th(static_cast<Eigen::Index>(net.size()) * (p + 1));
    for (std::size_t i = 0; i < net.size(); ++i) {
        const auto o = static_cast<Eigen::Index>(i) * (p + 1);
        th[o] = net.model(i).offset;
        th.segment(o + 1, p) = net.model(i).gains;
    }
    return th;
}

inline std::vector<LocalLinearModel> unpack(const VectorXd& th, std::size_t K, std::size_t p) {
    std::vector<LocalLinearModel> ms(K);
    const auto pp = static_cast<Eigen::Index>(p);
    for (std::size_t i = 0; i < K; ++i) {
        const auto o = static_cast<Eigen::Index>(i) * (pp + 1);
        ms[i].offset = th[o];
        ms[i].gains = th.segment(o + 1, pp);
    }
    return ms;
}

} // namespace detail

/// Adjusts the local model parameters (validities frozen) until the critical
/// input gains share the requested sign with margin and, for relative degree
/// one, the controller certificate exists. Throws CertifiabilityError when
/// the iteration budget runs out.
[[nodiscard]] inline FineTuneResult fine_tune_for_certifiability(const NarxModel& model,
                                                                 const RegressorSet& data,
                                                                 const FineTuneConfig& cfg = {}) {
    if (cfg.sign != 1 && cfg.sign != -1)
        throw ShapeError("target sign must be +1 or -1");
    if (!(cfg.sign_margin > 0.0))
        throw ShapeError("sign margin must be positive");
    const auto& dl = model.delays();
    if (dl.input_count() != 1 || dl.output_count() != 1)
        throw WrongKindError("fine-tuning targets single-input single-output models");
    if (!dl.inputs[0].val.empty())
        throw UnsupportedError("input delays in the validity are not supported");
    if (dl.inputs[0].lin.empty())
        throw AssumptionError("input does not enter the model");
    const auto& net = model.net();
    const auto n = static_cast<Eigen::Index>(data.rows());
    if (n == 0)
        throw InsufficientDataError("no data for fine-tuning");
    if (data.x_lin.cols() != static_cast<Eigen::Index>(net.lin_dim()) ||
        data.x_val.cols() != static_cast<Eigen::Index>(net.val_dim()))
        throw ShapeError("regressors do not match the network");

    const int delta = dl.inputs[0].lin.front();
    detail::TuneProblem pr;
    pr.K = net.size();
    pr.p = net.lin_dim();
    pr.target = data.target;
    pr.b1 = model.gain_index(SignalKind::Input, 0, delta);
    for (int dly : dl.inputs[0].lin)
        if (dly != delta)
            pr.tail.push_back(model.gain_index(SignalKind::Input, 0, dly));
    const auto P1 = static_cast<Eigen::Index>(pr.p + 1);
    pr.z.resize(n, static_cast<Eigen::Index>(pr.K) * P1);
    for (Eigen::Index r = 0; r < n; ++r) {
        const VectorXd phi = net.validity_weights(data.x_val.row(r).transpose());
        for (std::size_t i = 0; i < pr.K; ++i) {
            const auto o = static_cast<Eigen::Index>(i) * P1;
            pr.z(r, o) = phi[static_cast<Eigen::Index>(i)];
            pr.z.block(r, o + 1, 1, P1 - 1) = phi[static_cast<Eigen::Index>(i)] * data.x_lin.row(r);
        }
    }
    const double s = cfg.sign;
    const double dn = static_cast<double>(n);
    auto b1_of = [&](const VectorXd& th, std::size_t i) {
        return th[static_cast<Eigen::Index>(i) * P1 + 1 + pr.b1];
    };

    std::vector<bool> stab_active(pr.K, false);
    struct Term {
        double h;
        std::vector<std::pair<Eigen::Index, double>> grad;
    };
    // active hinge residuals; the penalty is the sum of their squares
    auto penalty_terms = [&](const VectorXd& th) {
        std::vector<Term> terms;
        for (std::size_t i = 0; i < pr.K; ++i) {
            const auto base = static_cast<Eigen::Index>(i) * P1 + 1;
            const double b = th[base + pr.b1];
            const double h = 1.5 * cfg.sign_margin - s * b;
            if (h > 0.0)
                terms.push_back({h, {{base + pr.b1, -s}}});
            if (!stab_active[i] || s * b <= 0.0)
                continue;
            double sum = 0.0;
            for (long t : pr.tail)
                sum += std::abs(th[base + t]);
            const double rr = sum / (s * b);
            const double hs = rr - (1.0 - 1.5 * cfg.stability_margin);
            if (hs > 0.0) {
                Term t{hs, {{base + pr.b1, -rr / b}}};
                for (long tl : pr.tail) {
                    const double v = th[base + tl];
                    t.grad.emplace_back(base + tl, (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) / (s * b));
                }
                terms.push_back(std::move(t));
            }
        }
        return terms;
    };
    auto penalty = [&](const VectorXd& th) {
        double p = 0.0;
        for (const auto& t : penalty_terms(th))
            p += t.h * t.h;
        return p;
    };

    double weight = cfg.hinge_weight;
    auto objective = [&](const VectorXd& th) {
        return (pr.z * th - pr.target).squaredNorm() / dn + weight * penalty(th);
    };

    const MatrixXd H0 = (2.0 / dn) * (pr.z.transpose() * pr.z);
    const double jitter = 1e-9 * (1.0 + H0.diagonal().maxCoeff());

    VectorXd th = detail::pack(net);
    const VectorXd e0 = pr.z * th - pr.target;
    FineTuneResult out;
    out.mse_before = e0.squaredNorm() / dn;

    auto check = [&](const VectorXd& theta, Verdict& verdict) {
        for (std::size_t i = 0; i < pr.K; ++i)
            if (s * b1_of(theta, i) < cfg.sign_margin)
                return false;
        const NarxModel m = model.with_net(net.with_models(detail::unpack(theta, pr.K, pr.p)));
        if (delta != 1) {
            verdict = Verdict::NotCertified;
            return true;
        }
        const auto c = certify_bibo(m, cfg.lmi);
        verdict = c.verdict;
        if (c.verdict == Verdict::Certified)
            return true;
        for (std::size_t i = 0; i < pr.K; ++i)
            stab_active[i] = true;
        return false;
    };

    double best_pen = std::numeric_limits<double>::infinity();
    double prev = objective(th);
    for (int it = 0; it <= cfg.max_iterations; ++it) {
        Verdict v = Verdict::NotCertified;
        if (check(th, v)) {
            out.model = model.with_net(net.with_models(detail::unpack(th, pr.K, pr.p)));
            out.iterations = it;
            out.mse_after = (pr.z * th - pr.target).squaredNorm() / dn;
            out.verdict = v;
            out.penalty = penalty(th);
            return out;
        }
        if (it == cfg.max_iterations)
            break;
        // gradient step preconditioned by the Gauss-Newton curvature
        VectorXd g = (2.0 / dn) * (pr.z.transpose() * (pr.z * th - pr.target));
        MatrixXd H = H0;
        H.diagonal().array() += jitter;
        for (const auto& t : penalty_terms(th)) {
            for (const auto& [a, ga] : t.grad) {
                g[a] += 2.0 * weight * t.h * ga;
                for (const auto& [b, gb] : t.grad)
                    H(a, b) += 2.0 * weight * ga * gb;
            }
        }
        const VectorXd dir = -H.ldlt().solve(g);
        const double f0 = objective(th);
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls) {
            const VectorXd trial = th + step * dir;
            if (objective(trial) < f0) {
                th = trial;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        const double f1 = objective(th);
        best_pen = std::min(best_pen, penalty(th));
        if (!moved || prev - f1 < 1e-6 * (1.0 + std::abs(prev)))
            weight *= 2.0;
        prev = objective(th);
    }
    throw CertifiabilityError("fine-tuning budget of " + std::to_string(cfg.max_iterations) +
                                  " iterations exhausted before the constraints were met",
                              best_pen);
}

} // namespace lmnff
