#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "state_space.hpp"

namespace lmnff {

// ----------------------------------------------------------------------------
// Relative degree and the same-sign condition
// ----------------------------------------------------------------------------

struct SignCheck {
    bool ok = false;
    int sign = 0;         // +1 / -1 when ok
    double margin = 0.0;  // min |b_j^(i)| when ok
    std::vector<std::size_t> violating;
    std::string reason;
};

/// All local gains on input `input` at `delay` nonzero with a common sign.
[[nodiscard]] inline SignCheck same_sign_check(const NarxModel& model, int delay,
                                               std::size_t input = 0) {
    SignCheck r;
    const auto& net = model.net();
    std::vector<std::size_t> pos, neg, zero;
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < net.size(); ++i) {
        const double b = model.gain(i, SignalKind::Input, input, delay);
        if (b > 0.0)
            pos.push_back(i);
        else if (b < 0.0)
            neg.push_back(i);
        else
            zero.push_back(i);
        margin = std::min(margin, std::abs(b));
    }
    if (!zero.empty()) {
        r.violating = zero;
        r.reason = "zero gain on the critical input delay";
        return r;
    }
    if (!pos.empty() && !neg.empty()) {
        r.violating = pos.size() >= neg.size() ? neg : pos;
        r.reason = "critical input gains change sign across local models";
        return r;
    }
    r.ok = true;
    r.sign = pos.empty() ? -1 : 1;
    r.margin = margin;
    return r;
}

struct RelativeDegreeReport {
    int delta = 0;
    bool well_defined = false;
    bool zero_dynamics = false;
    bool input_affine = true; // critical delay not among the validity delays
    int system_order = 0;
    std::string reason;
};

namespace detail {
inline int siso_system_order(const DelayConfig& delays) {
    int n = 0;
    for (const auto& s : delays.inputs)
        n += std::max(s.max_delay() - 1, 0);
    for (const auto& s : delays.disturbances)
        n += std::max(s.max_delay() - 1, 0);
    for (const auto& s : delays.outputs)
        n += std::max(s.max_delay(), 1);
    return n;
}
} // namespace detail

/// delta = min(I u I~) for input channel `input`; ill-definedness is reported,
/// not thrown.
[[nodiscard]] inline RelativeDegreeReport relative_degree(const DelayConfig& delays,
                                                          const LocalModelNetwork& net,
                                                          std::size_t input = 0) {
    RelativeDegreeReport r;
    r.system_order = detail::siso_system_order(delays);
    if (input >= delays.input_count() || delays.inputs[input].lin.empty()) {
        r.reason = "input does not enter the model";
        return r;
    }
    const auto& s = delays.inputs[input];
    r.delta = s.lin.front();
    if (!s.val.empty())
        r.delta = std::min(r.delta, s.val.front());
    r.zero_dynamics = r.delta < r.system_order;
    r.input_affine = !std::binary_search(s.val.begin(), s.val.end(), r.delta);
    if (!r.input_affine) {
        r.well_defined = true;
        r.reason = "critical delay enters the validity; gain sign not checked";
        return r;
    }
    const NarxModel model(net, delays);
    const auto sc = same_sign_check(model, r.delta, input);
    r.well_defined = sc.ok;
    if (!sc.ok)
        r.reason = sc.reason;
    return r;
}

/// phi_bar_i = b_i phi_i / sum_j b_j phi_j for same-sign, nonzero b.
[[nodiscard]] inline VectorXd validity_transform(const VectorXd& phi, const VectorXd& b1) {
    if (phi.size() != b1.size() || phi.size() == 0)
        throw ShapeError("validity transform: phi and b1 lengths differ");
    const bool all_pos = (b1.array() > 0.0).all();
    const bool all_neg = (b1.array() < 0.0).all();
    if (!all_pos && !all_neg)
        throw AssumptionError("validity transform requires nonzero gains of a common sign");
    const VectorXd num = b1.cwiseProduct(phi);
    return num / num.sum();
}

// ----------------------------------------------------------------------------
// Inverse (controller) dynamics for relative degree one
// ----------------------------------------------------------------------------

struct InverseSystem {
    std::vector<MatrixXd> a_hat;        // shift rows + [b_nu .. b_2]
    std::vector<double> lambda;         // -1 / b_1
    std::vector<MatrixXd> scaled;       // Lambda_i * A_hat_i
    bool trivially_stable = false;      // nu = 1: no internal input states
};

/// Per-model controller state matrices for a SISO network (with or without
/// disturbance) whose relative degree is one.
[[nodiscard]] inline InverseSystem inverse_system_matrices(const NarxModel& model) {
    const auto& dl = model.delays();
    if (dl.input_count() != 1 || dl.output_count() != 1)
        throw WrongKindError("inverse system matrices are defined for single-input single-output models");
    const auto rd = relative_degree(dl, model.net());
    if (rd.delta != 1 || !rd.input_affine)
        throw AssumptionError("relative degree one with an input-affine network is required (delta = " +
                              std::to_string(rd.delta) + ")");
    if (!dl.inputs[0].val.empty())
        throw AssumptionError("input delays in the validity make the control law implicit");
    const auto sc = same_sign_check(model, 1);
    if (!sc.ok)
        throw AssumptionError("critical input gains violate the same-sign condition: " + sc.reason);

    InverseSystem inv;
    const int nu = dl.inputs[0].max_delay();
    const Eigen::Index m = nu - 1;
    inv.trivially_stable = m == 0;
    for (std::size_t i = 0; i < model.net().size(); ++i) {
        const double b1 = model.gain(i, SignalKind::Input, 0, 1);
        MatrixXd a = MatrixXd::Zero(m, m);
        for (Eigen::Index r = 0; r + 1 < m; ++r)
            a(r, r + 1) = 1.0;
        for (Eigen::Index c = 0; c < m; ++c)
            a(m - 1, c) = model.gain(i, SignalKind::Input, 0, nu - static_cast<int>(c));
        MatrixXd s = a;
        if (m > 0)
            s.row(m - 1) *= -1.0 / b1;
        inv.a_hat.push_back(std::move(a));
        inv.lambda.push_back(-1.0 / b1);
        inv.scaled.push_back(std::move(s));
    }
    return inv;
}

// ----------------------------------------------------------------------------
// Common quadratic Lyapunov function: find P > 0 with M_i' P M_i - P < 0
// ----------------------------------------------------------------------------

enum class Verdict { Certified, Infeasible, NotCertified };

[[nodiscard]] inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::Certified: return "certified";
    case Verdict::Infeasible: return "infeasible";
    default: return "not certified";
    }
}

struct BiboCertificate {
    MatrixXd P;
    double margin = 0.0;            // min(lambda_min(P), -lambda_max of every constraint)
    double p_min_eigenvalue = 0.0;
    std::vector<double> residuals;  // lambda_max(M_i' P M_i - P) per local model
};

struct LmiOptions {
    double epsilon = 1e-8;
    int max_iterations = 4000;
};

struct LyapunovResult {
    Verdict verdict = Verdict::NotCertified;
    std::optional<BiboCertificate> certificate;
    double best_objective = std::numeric_limits<double>::infinity();
    std::string reason;
};

namespace detail {

inline double spectral_radius(const MatrixXd& m) {
    if (m.size() == 0)
        return 0.0;
    Eigen::EigenSolver<MatrixXd> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline Eigen::SelfAdjointEigenSolver<MatrixXd> sym_eig(const MatrixXd& s) {
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (s + s.transpose()));
}

inline double max_eig(const MatrixXd& s) { return sym_eig(s).eigenvalues().maxCoeff(); }
inline double min_eig(const MatrixXd& s) { return sym_eig(s).eigenvalues().minCoeff(); }

/// max(lambda_max(M_i' P M_i - P), lambda_max(-P)).
inline double lmi_objective(const MatrixXd& P, std::span<const MatrixXd> ms) {
    double f = -min_eig(P);
    for (const auto& m : ms)
        f = std::max(f, max_eig(m.transpose() * P * m - P));
    return f;
}

/// Solves P = sum_i M_i' P M_i + I by vectorization; empty when singular.
inline std::optional<MatrixXd> summed_lyapunov(std::span<const MatrixXd> ms) {
    const Eigen::Index n = ms.front().rows();
    MatrixXd lhs = MatrixXd::Identity(n * n, n * n);
    for (const auto& m : ms)
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b)
                // vec(M' P M) = (M' kron M') vec(P), column-major vec
                lhs.block(b * n, a * n, n, n) -= m(a, b) * m.transpose();
    const MatrixXd eye = MatrixXd::Identity(n, n);
    const VectorXd rhs = Eigen::Map<const VectorXd>(eye.data(), n * n);
    Eigen::FullPivLU<MatrixXd> lu(lhs);
    if (!lu.isInvertible())
        return std::nullopt;
    VectorXd p = lu.solve(rhs);
    MatrixXd P = Eigen::Map<MatrixXd>(p.data(), n, n);
    P = 0.5 * (P + P.transpose());
    if (!P.allFinite())
        return std::nullopt;
    return P;
}

/// Scales P so that the strict inequalities hold with margin epsilon, if the
/// sign pattern already certifies; returns the certificate when verified.
inline std::optional<BiboCertificate> verify_and_scale(MatrixXd P, std::span<const MatrixXd> ms,
                                                       double eps) {
    P = 0.5 * (P + P.transpose());
    if (!P.allFinite())
        return std::nullopt;
    const double tr = P.trace();
    if (tr > 0.0)
        P *= static_cast<double>(P.rows()) / tr;
    double pmin = min_eig(P);
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& m : ms)
        worst = std::max(worst, max_eig(m.transpose() * P * m - P));
    if (!(pmin > 0.0) || !(worst < 0.0))
        return std::nullopt;
    const double scale = std::max(1.0, 2.0 * eps / std::min(pmin, -worst));
    P *= scale;
    BiboCertificate c;
    c.P = P;
    c.p_min_eigenvalue = min_eig(P);
    c.margin = c.p_min_eigenvalue;
    for (const auto& m : ms) {
        const double r = max_eig(m.transpose() * P * m - P);
        c.residuals.push_back(r);
        c.margin = std::min(c.margin, -r);
    }
    if (!(c.p_min_eigenvalue > eps))
        return std::nullopt;
    for (double r : c.residuals)
        if (!(r < -eps))
            return std::nullopt;
    return c;
}

/// Smoothed max-eigenvalue descent on the trace-normalized problem.
/// Returns the best P found.
inline MatrixXd refine_lyapunov(MatrixXd P, std::span<const MatrixXd> ms, int iterations,
                                double* best_value) {
    const Eigen::Index n = P.rows();
    P *= static_cast<double>(n) / std::max(P.trace(), 1e-300);
    MatrixXd best = P;
    double best_f = lmi_objective(P, ms);
    double mu = 0.05 * (std::abs(best_f) + 1e-3);

    // smoothed objective and its gradient
    auto smooth = [&](const MatrixXd& X, MatrixXd* grad) {
        std::vector<Eigen::SelfAdjointEigenSolver<MatrixXd>> eigs;
        std::vector<const MatrixXd*> maps;
        eigs.push_back(sym_eig(-X));
        maps.push_back(nullptr);
        for (const auto& m : ms) {
            eigs.push_back(sym_eig(m.transpose() * X * m - X));
            maps.push_back(&m);
        }
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& e : eigs)
            top = std::max(top, e.eigenvalues().maxCoeff());
        double z = 0.0;
        for (const auto& e : eigs)
            z += ((e.eigenvalues().array() - top) / mu).exp().sum();
        const double value = top + mu * std::log(z);
        if (grad) {
            grad->setZero(n, n);
            for (std::size_t c = 0; c < eigs.size(); ++c) {
                const auto& vals = eigs[c].eigenvalues();
                const auto& vecs = eigs[c].eigenvectors();
                for (Eigen::Index e = 0; e < vals.size(); ++e) {
                    const double w = std::exp((vals[e] - top) / mu) / z;
                    if (w < 1e-14)
                        continue;
                    const VectorXd v = vecs.col(e);
                    if (maps[c] == nullptr) {
                        *grad -= w * v * v.transpose();
                    } else {
                        const VectorXd mv = *maps[c] * v;
                        *grad += w * (mv * mv.transpose() - v * v.transpose());
                    }
                }
            }
            const double t = grad->trace() / static_cast<double>(n);
            grad->diagonal().array() -= t;
        }
        return value;
    };

    double step = 1.0;
    MatrixXd g(n, n);
    int stall = 0;
    for (int it = 0; it < iterations; ++it) {
        const double f0 = smooth(P, &g);
        const double gn2 = g.squaredNorm();
        if (gn2 < 1e-30) {
            mu *= 0.5;
            if (mu < 1e-12)
                break;
            continue;
        }
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            MatrixXd trial = P - step * g;
            if (smooth(trial, nullptr) <= f0 - 1e-4 * step * gn2) {
                P = trial;
                accepted = true;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        const double f = lmi_objective(P, ms);
        if (f < best_f - 1e-12) {
            best_f = f;
            best = P;
            stall = 0;
        } else {
            ++stall;
        }
        if (best_f < 0.0 && it % 10 == 0)
            break; // strictly feasible on the normalized problem
        if (!accepted || stall > 25) {
            mu *= 0.5;
            step = 1.0;
            stall = 0;
            if (mu < 1e-12)
                break;
        }
    }
    if (best_value)
        *best_value = best_f;
    return best;
}

} // namespace detail

/// Searches for a common quadratic Lyapunov function of the given matrices.
/// Any matrix with spectral radius >= 1 proves infeasibility; otherwise the
/// search either returns a verified certificate or reports "not certified".
[[nodiscard]] inline LyapunovResult solve_common_lyapunov(std::span<const MatrixXd> ms,
                                                          const LmiOptions& opt = {}) {
    LyapunovResult res;
    if (ms.empty())
        throw ShapeError("common Lyapunov search needs at least one matrix");
    const Eigen::Index n = ms.front().rows();
    for (const auto& m : ms)
        if (m.rows() != n || m.cols() != n)
            throw ShapeError("constraint matrices must be square and equally sized");
    if (n == 0) {
        res.verdict = Verdict::Certified;
        res.certificate = BiboCertificate{MatrixXd(0, 0), std::numeric_limits<double>::infinity(),
                                          std::numeric_limits<double>::infinity(),
                                          std::vector<double>(ms.size(), 0.0)};
        res.best_objective = -std::numeric_limits<double>::infinity();
        res.reason = "no internal controller states";
        return res;
    }
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const double rho = detail::spectral_radius(ms[i]);
        if (!(rho < 1.0)) {
            res.verdict = Verdict::Infeasible;
            res.reason = "local model " + std::to_string(i) + " has spectral radius " +
                         std::to_string(rho) + " >= 1";
            res.best_objective = std::numeric_limits<double>::infinity();
            return res;
        }
    }

    std::vector<MatrixXd> starts;
    if (auto p = detail::summed_lyapunov(ms))
        starts.push_back(*p);
    MatrixXd sum = MatrixXd::Zero(n, n);
    for (const auto& m : ms) {
        const MatrixXd one[] = {m};
        if (auto p = detail::summed_lyapunov(one)) {
            sum += *p / p->trace();
            starts.push_back(*p);
        }
    }
    starts.push_back(sum);
    starts.push_back(MatrixXd::Identity(n, n));

    for (const auto& s : starts) {
        if (auto c = detail::verify_and_scale(s, ms, opt.epsilon)) {
            res.verdict = Verdict::Certified;
            res.best_objective = std::min(res.best_objective, detail::lmi_objective(c->P, ms));
            res.certificate = std::move(c);
            return res;
        }
        res.best_objective = std::min(res.best_objective,
                                      detail::lmi_objective(s * (double(n) / std::max(s.trace(), 1e-300)), ms));
    }

    const int per_start = std::max(1, opt.max_iterations / static_cast<int>(starts.size()));
    for (const auto& s : starts) {
        double f = 0.0;
        const MatrixXd P = detail::refine_lyapunov(s, ms, per_start, &f);
        res.best_objective = std::min(res.best_objective, f);
        if (auto c = detail::verify_and_scale(P, ms, opt.epsilon)) {
            res.verdict = Verdict::Certified;
            res.certificate = std::move(c);
            return res;
        }
    }
    res.verdict = Verdict::NotCertified;
    res.reason = "search budget exhausted without a certificate (criterion is sufficient only)";
    return res;
}

struct CertificationResult {
    Verdict verdict = Verdict::NotCertified;
    std::optional<BiboCertificate> certificate;
    RelativeDegreeReport relative_degree;
    std::string reason;
};

/// BIBO certificate of the feedforward controller of a relative-degree-one
/// SISO network. Throws AssumptionError when the preconditions fail.
[[nodiscard]] inline CertificationResult certify_bibo(const NarxModel& model,
                                                      const LmiOptions& opt = {}) {
    CertificationResult out;
    out.relative_degree = relative_degree(model.delays(), model.net());
    const auto inv = inverse_system_matrices(model);
    if (inv.trivially_stable) {
        out.verdict = Verdict::Certified;
        out.certificate = BiboCertificate{MatrixXd(0, 0), std::numeric_limits<double>::infinity(),
                                          std::numeric_limits<double>::infinity(),
                                          std::vector<double>(inv.scaled.size(), 0.0)};
        out.reason = "no internal controller states";
        return out;
    }
    auto r = solve_common_lyapunov(inv.scaled, opt);
    out.verdict = r.verdict;
    out.certificate = std::move(r.certificate);
    out.reason = r.reason;
    return out;
}

/// Independent post-hoc check of a certificate against constraint matrices.
[[nodiscard]] inline bool verify_certificate(const BiboCertificate& c,
                                             std::span<const MatrixXd> ms, double eps = 1e-8) {
    if (c.P.size() == 0)
        return std::all_of(ms.begin(), ms.end(), [](const MatrixXd& m) { return m.size() == 0; });
    if (detail::min_eig(c.P) <= eps)
        return false;
    for (const auto& m : ms)
        if (detail::max_eig(m.transpose() * c.P * m - c.P) >= -eps)
            return false;
    return true;
}

// ----------------------------------------------------------------------------
// Linear (single local model) controller poles
// ----------------------------------------------------------------------------

/// Poles of the feedforward controller of a single-model network. The
/// denominator is beta z^q + sum_m r_m z^(q-m) with q = max(delta, nu - 1),
/// where beta multiplies u(k) and r_m multiplies u(k-m) in the control law.
[[nodiscard]] inline std::vector<std::complex<double>> linear_controller_poles(const NarxModel& model) {
    if (model.net().size() != 1)
        throw WrongKindError("linear controller poles need exactly one local model");
    const auto& dl = model.delays();
    if (dl.input_count() != 1 || dl.output_count() != 1)
        throw WrongKindError("linear controller poles are defined for SISO models");
    const auto rd = relative_degree(dl, model.net());
    if (rd.delta < 1)
        throw AssumptionError("input does not enter the model");
    const LpvStateSpace ss(std::vector<NarxModel>{model},
                           dl.max_delay(SignalKind::Disturbance) > 0 ? LpvKind::SisoDisturbance
                                                                     : LpvKind::Siso);
    const auto m = ss.assemble(VectorXd::Ones(1));
    const MatrixXd& C = ss.output_matrix();
    MatrixXd cA = C;
    for (int g = 0; g < rd.delta - 1; ++g)
        cA = cA * m.A;
    const double beta = (cA * m.B)(0, 0);
    if (beta == 0.0)
        throw SingularityError("control law does not depend on u(k)");
    const MatrixXd cAd = cA * m.A;
    const int nu = dl.inputs[0].max_delay();
    const int q = std::max(rd.delta, nu - 1);
    // coefficients of z^q .. z^0
    VectorXd coeff = VectorXd::Zero(q + 1);
    coeff[0] = beta;
    for (int lag = 1; lag <= nu - 1; ++lag) {
        const Eigen::Index s = ss.find_slot(SignalKind::Input, 0, lag);
        coeff[lag] = cAd(0, s);
    }
    std::vector<std::complex<double>> poles;
    if (q == 0)
        return poles;
    MatrixXd companion = MatrixXd::Zero(q, q);
    for (int c = 0; c < q; ++c)
        companion(0, c) = -coeff[c + 1] / beta;
    for (int r = 1; r < q; ++r)
        companion(r, r - 1) = 1.0;
    Eigen::EigenSolver<MatrixXd> es(companion, false);
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
        poles.push_back(es.eigenvalues()[i]);
    std::sort(poles.begin(), poles.end(), [](const auto& a, const auto& b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return poles;
}

/// Combined stability verdict used by the command line and the pipeline:
/// single-model networks are classified exactly from their poles, relative
/// degree one networks through the Lyapunov criterion, anything else is
/// reported as not certified.
struct StabilityAssessment {
    Verdict verdict = Verdict::NotCertified;
    RelativeDegreeReport relative_degree;
    std::optional<std::vector<std::complex<double>>> poles;
    std::optional<CertificationResult> certification;
    std::string reason;
};

[[nodiscard]] inline StabilityAssessment assess_stability(const NarxModel& model,
                                                          const LmiOptions& opt = {}) {
    StabilityAssessment a;
    a.relative_degree = relative_degree(model.delays(), model.net());
    if (model.net().size() == 1 && a.relative_degree.delta >= 1) {
        try {
            a.poles = linear_controller_poles(model);
            double rho = 0.0;
            for (const auto& p : *a.poles)
                rho = std::max(rho, std::abs(p));
            a.verdict = rho < 1.0 ? Verdict::Certified : Verdict::Infeasible;
            a.reason = "single local model: pole magnitude " + std::to_string(rho);
        } catch (const SingularityError& e) {
            a.reason = e.what();
        }
    }
    if (a.relative_degree.delta == 1 && a.relative_degree.well_defined &&
        a.relative_degree.input_affine) {
        try {
            auto c = certify_bibo(model, opt);
            if (!a.poles) {
                a.verdict = c.verdict;
                a.reason = c.reason;
            }
            a.certification = std::move(c);
        } catch (const AssumptionError& e) {
            if (!a.poles)
                a.reason = e.what();
        }
    } else if (!a.poles) {
        a.reason = a.relative_degree.delta != 1
                       ? "relative degree " + std::to_string(a.relative_degree.delta) +
                             " is not covered by the Lyapunov criterion"
                       : "relative degree not well defined: " + a.relative_degree.reason;
    }
    return a;
}

} // namespace lmnff
