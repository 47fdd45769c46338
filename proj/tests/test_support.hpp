#pragma once

// Seeded generators, random network builders and independent oracles shared by
// the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <lmnff/lmnff.hpp>

namespace lmnff::testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
    int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng_); }
    bool coin() { return integer(0, 1) == 1; }
    double sign() { return coin() ? 1.0 : -1.0; }

    VectorXd vector(Eigen::Index n, double a, double b) {
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v[i] = uniform(a, b);
        return v;
    }

    /// Random point on the probability simplex.
    VectorXd simplex(Eigen::Index n) {
        VectorXd v(n);
        std::exponential_distribution<double> e(1.0);
        for (Eigen::Index i = 0; i < n; ++i)
            v[i] = e(rng_);
        return v / v.sum();
    }

    /// {1} plus a random subset of 2..max.
    std::vector<int> delays_with_one(int max) {
        std::vector<int> s{1};
        for (int d = 2; d <= max; ++d)
            if (coin())
                s.push_back(d);
        return s;
    }

    /// Nonempty random subset of 1..max.
    std::vector<int> delays(int max) {
        std::vector<int> s;
        for (int d = 1; d <= max; ++d)
            if (coin())
                s.push_back(d);
        if (s.empty())
            s.push_back(integer(1, max));
        return s;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// Gain of local model i on a regressor term.
using GainFn = std::function<double(std::size_t i, const RegressorTerm& term)>;

inline NarxModel build_model(Gen& g, DelayConfig dl, std::size_t K, const GainFn& gain,
                             std::size_t target = 0, double offset_range = 0.5) {
    dl.normalize();
    const auto lin = regressor_layout(dl, false);
    std::vector<LocalLinearModel> models;
    std::vector<ValidityFunction> vals;
    for (std::size_t i = 0; i < K; ++i) {
        LocalLinearModel m;
        m.offset = g.uniform(-offset_range, offset_range);
        m.gains.resize(static_cast<Eigen::Index>(lin.size()));
        for (std::size_t t = 0; t < lin.size(); ++t)
            m.gains[static_cast<Eigen::Index>(t)] = gain(i, lin[t]);
        models.push_back(std::move(m));
        const auto vd = static_cast<Eigen::Index>(dl.val_dim());
        vals.push_back({g.vector(vd, -1.0, 1.0), g.vector(vd, 0.4, 1.2)});
    }
    LocalModelNetwork net(std::move(models), std::move(vals), dl.lin_dim(), dl.val_dim());
    return NarxModel(std::move(net), std::move(dl), target);
}

/// One local model with the listed gains in layout order.
inline NarxModel single_model(DelayConfig dl, double offset, std::vector<double> gains) {
    dl.normalize();
    VectorXd w = Eigen::Map<VectorXd>(gains.data(), static_cast<Eigen::Index>(gains.size()));
    ValidityFunction v{VectorXd::Zero(static_cast<Eigen::Index>(dl.val_dim())),
                       VectorXd::Ones(static_cast<Eigen::Index>(dl.val_dim()))};
    LocalModelNetwork net({{offset, w}}, {v}, dl.lin_dim(), dl.val_dim());
    return NarxModel(std::move(net), std::move(dl));
}

/// Certifiable SISO network (optionally with a disturbance): relative degree
/// one, critical gains of one sign, small input tails, contractive outputs.
inline NarxModel random_siso(Gen& g, bool disturbance, std::size_t K = 0) {
    if (K == 0)
        K = static_cast<std::size_t>(g.integer(1, 4));
    const double s = g.sign();
    const auto I = g.delays_with_one(3);
    const auto O = g.delays(3);
    std::vector<int> D, Dv;
    if (disturbance) {
        D = g.delays_with_one(2);
        Dv = {1};
    }
    auto dl = DelayConfig::siso(I, O, {}, {O.front()}, D, Dv);
    std::vector<double> b1(K);
    for (auto& b : b1)
        b = s * g.uniform(0.6, 1.5);
    const double tail = 0.4 / static_cast<double>(I.size());
    const double out = 0.8 / static_cast<double>(O.size());
    return build_model(g, dl, K, [&](std::size_t i, const RegressorTerm& t) {
        switch (t.kind) {
        case SignalKind::Input: return t.delay == 1 ? b1[i] : g.uniform(-tail, tail) * std::abs(b1[i]);
        case SignalKind::Disturbance: return g.uniform(-0.5, 0.5);
        default: return g.uniform(-out, out);
        }
    });
}

/// Two-input two-output networks with dominant diagonal input gains and
/// relative degree one on every pair.
inline std::vector<NarxModel> random_mimo(Gen& g) {
    std::vector<NarxModel> models;
    for (std::size_t t = 0; t < 2; ++t) {
        DelayConfig dl;
        for (std::size_t j = 0; j < 2; ++j)
            dl.inputs.push_back({g.delays_with_one(2), {}});
        for (std::size_t j = 0; j < 2; ++j)
            dl.outputs.push_back(j == t ? DelaySet{g.delays(2), {1}} : DelaySet{{1}, {}});
        dl.outputs[t].val = {dl.outputs[t].lin.front()};
        const auto K = static_cast<std::size_t>(g.integer(1, 3));
        models.push_back(build_model(
            g, dl, K,
            [&](std::size_t, const RegressorTerm& term) {
                if (term.kind == SignalKind::Input) {
                    if (term.delay > 1)
                        return g.uniform(-0.1, 0.1);
                    return term.channel == t ? g.uniform(1.0, 2.0) : g.uniform(-0.3, 0.3);
                }
                return term.channel == t ? g.uniform(-0.3, 0.3) : g.uniform(-0.2, 0.2);
            },
            t));
    }
    return models;
}

/// Smooth bounded test reference (sum of sinusoids, |v| <= amplitude).
inline std::vector<double> smooth_signal(Gen& g, std::size_t L, double amplitude = 1.0) {
    const double f1 = g.uniform(0.01, 0.05), f2 = g.uniform(0.05, 0.12);
    const double p1 = g.uniform(0, 6.28), p2 = g.uniform(0, 6.28);
    std::vector<double> v(L);
    for (std::size_t k = 0; k < L; ++k)
        v[k] = amplitude * (0.6 * std::sin(f1 * static_cast<double>(k) + p1) +
                            0.4 * std::sin(f2 * static_cast<double>(k) + p2));
    return v;
}

// ----------------------------------------------------------------------------
// Oracles
// ----------------------------------------------------------------------------

/// Normalized Gaussian weights computed directly from the formula.
inline std::vector<double> oracle_weights(const LocalModelNetwork& net, const std::vector<double>& xv) {
    std::vector<double> raw(net.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        double p = 1.0;
        const auto& v = net.validities()[i];
        for (std::size_t d = 0; d < xv.size(); ++d) {
            const double z = (xv[d] - v.centers[static_cast<Eigen::Index>(d)]) /
                             v.widths[static_cast<Eigen::Index>(d)];
            p *= std::exp(-0.5 * z * z);
        }
        raw[i] = p;
        sum += p;
    }
    for (auto& r : raw)
        r /= sum;
    return raw;
}

/// Signals on absolute time: hist(kind, channel, t).
using SignalFn = std::function<double(SignalKind, std::size_t, long)>;

/// y(k+1) by explicit summation over the delay sets.
inline double oracle_predict(const NarxModel& m, const SignalFn& s, long k) {
    const auto& dl = m.delays();
    std::vector<double> xv;
    auto collect = [&](SignalKind kind, const std::vector<DelaySet>& sets) {
        for (std::size_t c = 0; c < sets.size(); ++c)
            for (int dly : sets[c].val)
                xv.push_back(s(kind, c, k - dly + 1));
    };
    collect(SignalKind::Input, dl.inputs);
    collect(SignalKind::Disturbance, dl.disturbances);
    collect(SignalKind::Output, dl.outputs);
    const auto w = oracle_weights(m.net(), xv);
    double y = 0.0;
    for (std::size_t i = 0; i < m.net().size(); ++i) {
        double yi = m.net().model(i).offset;
        auto add = [&](SignalKind kind, const std::vector<DelaySet>& sets) {
            for (std::size_t c = 0; c < sets.size(); ++c)
                for (int dly : sets[c].lin)
                    yi += m.gain(i, kind, c, dly) * s(kind, c, k - dly + 1);
        };
        add(SignalKind::Input, dl.inputs);
        add(SignalKind::Disturbance, dl.disturbances);
        add(SignalKind::Output, dl.outputs);
        y += w[i] * yi;
    }
    return y;
}

/// Free-run recursion on absolute time. Signals before time 0 come from
/// `pre` (u, d up to -1; y up to 0). Returns y(1..L) per output.
inline std::vector<std::vector<double>>
oracle_free_run(const std::vector<NarxModel>& models, const std::vector<std::vector<double>>& u,
                const std::vector<std::vector<double>>& d, const SignalFn& pre) {
    const std::size_t L = u.front().size();
    const std::size_t dy = models.size();
    std::vector<std::vector<double>> y(dy); // y[c][k] = y(k+1)
    SignalFn s = [&](SignalKind kind, std::size_t c, long t) -> double {
        switch (kind) {
        case SignalKind::Input: return t < 0 ? pre(kind, c, t) : u[c][static_cast<std::size_t>(t)];
        case SignalKind::Disturbance: return t < 0 ? pre(kind, c, t) : d[c][static_cast<std::size_t>(t)];
        default: return t <= 0 ? pre(kind, c, t) : y[c][static_cast<std::size_t>(t - 1)];
        }
    };
    for (std::size_t k = 0; k < L; ++k) {
        std::vector<double> next(dy);
        for (const auto& m : models)
            next[m.target()] = oracle_predict(m, s, static_cast<long>(k));
        for (std::size_t c = 0; c < dy; ++c)
            y[c].push_back(next[c]);
    }
    return y;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> jacobi_eigenvalues(MatrixXd a) {
    const Eigen::Index n = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q)
                off += a(p, q) * a(p, q);
        if (off < 1e-30)
            break;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300)
                    continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        ev[static_cast<std::size_t>(i)] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline VectorXd gauss_solve(MatrixXd a, VectorXd b) {
    const Eigen::Index n = a.rows();
    for (Eigen::Index col = 0; col < n; ++col) {
        Eigen::Index piv = col;
        for (Eigen::Index r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col)))
                piv = r;
        a.row(col).swap(a.row(piv));
        std::swap(b[col], b[piv]);
        for (Eigen::Index r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            for (Eigen::Index c = col; c < n; ++c)
                a(r, c) -= f * a(col, c);
            b[r] -= f * b[col];
        }
    }
    VectorXd x(n);
    for (Eigen::Index r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (Eigen::Index c = r + 1; c < n; ++c)
            s -= a(r, c) * x[c];
        x[r] = s / a(r, r);
    }
    return x;
}

/// Weighted ridge least squares with an unpenalized offset, via explicit
/// normal equations over the augmented design [1, X]. Returns [offset; gains].
inline VectorXd oracle_wls(const MatrixXd& x, const VectorXd& y, const VectorXd& w, double ridge) {
    const Eigen::Index n = x.rows(), p = x.cols();
    MatrixXd z(n, p + 1);
    z.col(0).setOnes();
    z.rightCols(p) = x;
    MatrixXd lhs = MatrixXd::Zero(p + 1, p + 1);
    VectorXd rhs = VectorXd::Zero(p + 1);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index i = 0; i <= p; ++i) {
            rhs[i] += w[r] * z(r, i) * y[r];
            for (Eigen::Index j = 0; j <= p; ++j)
                lhs(i, j) += w[r] * z(r, i) * z(r, j);
        }
    for (Eigen::Index i = 1; i <= p; ++i)
        lhs(i, i) += ridge;
    return gauss_solve(lhs, rhs);
}

/// Least-squares slope of a series against its index.
inline double trend_slope(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = static_cast<double>(i);
        sx += x;
        sy += v[i];
        sxx += x * x;
        sxy += x * v[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Largest gap between the LPV rollout and the NARX recursion from random histories.
inline double rollout_gap(Gen& g, const LpvStateSpace& ss, const std::vector<NarxModel>& models, std::size_t L) {
    const std::size_t du = ss.input_count(), dd = ss.disturbance_count(), dy = ss.output_count();
    std::vector<std::vector<double>> hu(du), hd(dd), hy(dy);
    for (auto& h : hu)
        h = smooth_signal(g, 5);
    for (auto& h : hd)
        h = smooth_signal(g, 5);
    for (auto& h : hy)
        h = smooth_signal(g, 5, 0.5);
    // u, d at t in [-5, -1]; y at t in [-4, 0]
    SignalFn pre = [&](SignalKind kind, std::size_t c, long t) {
        switch (kind) {
        case SignalKind::Input: return hu[c][static_cast<std::size_t>(5 + t)];
        case SignalKind::Disturbance: return hd[c][static_cast<std::size_t>(5 + t)];
        default: return hy[c][static_cast<std::size_t>(4 + t)];
        }
    };
    std::vector<std::vector<double>> u(du), d(dd);
    for (auto& s : u)
        s = smooth_signal(g, L);
    for (auto& s : d)
        s = smooth_signal(g, L);
    const VectorXd x0 = ss.state_from(pre, 0);
    const auto lpv = ss.rollout(x0, u, d);
    const auto want = oracle_free_run(models, u, d, pre);
    double gap = 0.0;
    for (std::size_t c = 0; c < dy; ++c)
        for (std::size_t k = 0; k < L; ++k)
            gap = std::max(gap, std::abs(lpv[c][k] - want[c][k]));
    return gap;
}

} // namespace lmnff::testing
