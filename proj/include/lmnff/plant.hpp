#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "controller.hpp"

namespace lmnff {

// ----------------------------------------------------------------------------
// Signals
// ----------------------------------------------------------------------------

struct ExcitationConfig {
    double amplitude_min = -1.0;
    double amplitude_max = 1.0;
    int hold_min = 5;
    int hold_max = 20;
    std::size_t duration = 1000;
    std::uint64_t seed = 1;
};

/// Amplitude-modulated pseudo-random multistep signal.
[[nodiscard]] inline std::vector<double> generate_excitation(const ExcitationConfig& cfg) {
    if (cfg.duration == 0)
        throw ShapeError("excitation duration must be positive");
    if (cfg.hold_min < 1 || cfg.hold_max < cfg.hold_min)
        throw ShapeError("hold-time range must satisfy 1 <= min <= max");
    if (!(cfg.amplitude_max >= cfg.amplitude_min))
        throw ShapeError("amplitude range is empty");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> level(cfg.amplitude_min, cfg.amplitude_max);
    std::uniform_int_distribution<int> hold(cfg.hold_min, cfg.hold_max);
    std::vector<double> out;
    out.reserve(cfg.duration);
    while (out.size() < cfg.duration) {
        const double v = level(rng);
        const int h = hold(rng);
        for (int i = 0; i < h && out.size() < cfg.duration; ++i)
            out.push_back(v);
    }
    return out;
}

/// First-order lowpass, started at the first sample.
[[nodiscard]] inline std::vector<double> lowpass(std::span<const double> x, double time_constant,
                                                 double sample_period = 1.0) {
    if (!(time_constant > 0.0))
        throw ShapeError("lowpass time constant must be positive");
    if (!(sample_period > 0.0))
        throw ShapeError("sample period must be positive");
    const double alpha = 1.0 - std::exp(-sample_period / time_constant);
    std::vector<double> y(x.size());
    if (x.empty())
        return y;
    y[0] = x[0];
    for (std::size_t k = 1; k < x.size(); ++k)
        y[k] = y[k - 1] + alpha * (x[k] - y[k - 1]);
    return y;
}

/// Every `stride`-th sample starting with the first.
[[nodiscard]] inline std::vector<double> decimate(std::span<const double> x, std::size_t stride) {
    if (stride == 0)
        throw ShapeError("decimation stride must be positive");
    std::vector<double> y;
    for (std::size_t k = 0; k < x.size(); k += stride)
        y.push_back(x[k]);
    return y;
}

/// Backward difference divided by the sample period; the first value repeats.
[[nodiscard]] inline std::vector<double> differentiate(std::span<const double> x, double sample_period) {
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t k = 1; k < x.size(); ++k)
        y[k] = (x[k] - x[k - 1]) / sample_period;
    if (y.size() > 1)
        y[0] = y[1];
    return y;
}

struct ReferenceConfig {
    double amplitude = 1.0;
    int hold_min = 20;
    int hold_max = 60;
    double smoothing = 5.0; // lowpass time constant in samples
    std::size_t duration = 500;
    std::uint64_t seed = 1;
};

/// Smoothed random multistep reference, like a filtered joystick command.
/// Starts at rest: r(0) = 0, then the filter moves towards the first level.
[[nodiscard]] inline std::vector<double> generate_reference(const ReferenceConfig& cfg) {
    ExcitationConfig e{-cfg.amplitude, cfg.amplitude, cfg.hold_min, cfg.hold_max, cfg.duration, cfg.seed};
    auto raw = generate_excitation(e);
    if (raw.empty())
        return raw;
    raw.insert(raw.begin(), 0.0);
    raw.pop_back();
    return lowpass(raw, cfg.smoothing, 1.0);
}

// ----------------------------------------------------------------------------
// Plants
// ----------------------------------------------------------------------------

/// One valve-like channel: y(k+1) = a y(k) + g(u(k)) (1 + beta d(k)), with
/// g a deadzone followed by saturation.
struct ValveChannel {
    double a = 0.7;
    double gain = 1.0;
    double deadzone = 0.1;
    double saturation = 1.0;
    double beta = 0.0;
    double noise_std = 0.0;

    [[nodiscard]] double nonlinearity(double u) const {
        const double m = std::max(std::abs(u) - deadzone, 0.0);
        const double v = gain * std::copysign(m, u);
        return std::clamp(v, -saturation, saturation);
    }
};

/// Slow sinusoid plus lowpassed noise; independent of the plant input.
struct DisturbanceSpec {
    double offset = 0.0;
    double amplitude = 1.0;
    double period = 200.0;     // samples
    double noise_std = 0.3;
    double noise_smoothing = 10.0; // samples
};

enum class PlantKind { SisoValve, MimoCoupled };

struct PlantSpec {
    PlantKind kind = PlantKind::SisoValve;
    std::vector<ValveChannel> channels{ValveChannel{}};
    double coupling = 0.0;      // kappa: channel j also receives kappa g(u_other)
    DisturbanceSpec disturbance;
    int substeps = 1;           // fine simulation steps per sample
    double measurement_smoothing = 0.0; // lowpass time constant in fine steps, 0 = off
    double sample_period = 1.0;

    void validate() const {
        const std::size_t want = kind == PlantKind::SisoValve ? 1 : 2;
        if (channels.size() != want)
            throw ShapeError("plant kind needs " + std::to_string(want) + " channel(s)");
        for (const auto& c : channels)
            if (!(std::abs(c.a) < 1.0))
                throw ShapeError("plant pole must satisfy |a| < 1");
        if (substeps < 1)
            throw ShapeError("substeps must be at least 1");
        if (kind == PlantKind::SisoValve && coupling != 0.0)
            throw ShapeError("coupling requires the MIMO plant");
    }
    [[nodiscard]] std::size_t size() const { return channels.size(); }
};

/// Stepwise plant used by the closed-loop harness.
class Plant {
public:
    virtual ~Plant() = default;
    virtual void reset(std::uint64_t seed) = 0;
    [[nodiscard]] virtual std::size_t input_count() const = 0;
    [[nodiscard]] virtual std::size_t disturbance_count() const = 0;
    [[nodiscard]] virtual std::size_t output_count() const = 0;
    /// Measured y(k).
    [[nodiscard]] virtual VectorXd measured_outputs() const = 0;
    /// Measured d(k).
    [[nodiscard]] virtual VectorXd measured_disturbance() const = 0;
    /// Applies u(k) and moves to k+1.
    virtual void advance(const VectorXd& u) = 0;
};

class ValvePlant final : public Plant {
public:
    explicit ValvePlant(PlantSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        reset(0);
    }

    void reset(std::uint64_t seed) override {
        rng_.seed(seed);
        noise_rng_.seed(seed ^ 0x9e3779b97f4a7c15ULL);
        std::uniform_real_distribution<double> ph(0.0, 2.0 * kPi);
        phase_ = ph(rng_);
        fine_ = 0;
        dnoise_ = 0.0;
        x_.assign(spec_.size(), 0.0);
        filtered_.assign(spec_.size(), 0.0);
        d_ = disturbance_now();
        dfilt_ = d_;
        sample_noise();
    }

    [[nodiscard]] std::size_t input_count() const override { return spec_.size(); }
    [[nodiscard]] std::size_t disturbance_count() const override { return 1; }
    [[nodiscard]] std::size_t output_count() const override { return spec_.size(); }
    [[nodiscard]] const PlantSpec& spec() const { return spec_; }

    [[nodiscard]] VectorXd measured_outputs() const override {
        VectorXd y(static_cast<Eigen::Index>(spec_.size()));
        for (std::size_t j = 0; j < spec_.size(); ++j)
            y[static_cast<Eigen::Index>(j)] = (smoothing() ? filtered_[j] : x_[j]) + noise_[j];
        return y;
    }
    [[nodiscard]] VectorXd measured_disturbance() const override {
        return VectorXd::Constant(1, smoothing() ? dfilt_ : d_);
    }
    /// Noise-free plant output.
    [[nodiscard]] VectorXd true_outputs() const {
        return Eigen::Map<const VectorXd>(x_.data(), static_cast<Eigen::Index>(x_.size()));
    }

    void advance(const VectorXd& u) override {
        if (static_cast<std::size_t>(u.size()) != spec_.size())
            throw ShapeError("plant expects " + std::to_string(spec_.size()) + " inputs");
        const int m = spec_.substeps;
        std::vector<double> g(spec_.size());
        for (std::size_t j = 0; j < spec_.size(); ++j)
            g[j] = spec_.channels[j].nonlinearity(u[static_cast<Eigen::Index>(j)]);
        const double alpha =
            smoothing() ? 1.0 - std::exp(-1.0 / spec_.measurement_smoothing) : 1.0;
        for (int s = 0; s < m; ++s) {
            for (std::size_t j = 0; j < spec_.size(); ++j) {
                const auto& c = spec_.channels[j];
                double drive = g[j];
                if (spec_.size() == 2)
                    drive += spec_.coupling * g[1 - j];
                const double af = m == 1 ? c.a : std::pow(c.a, 1.0 / m);
                const double bf = m == 1 ? 1.0 : (1.0 - af) / (1.0 - c.a);
                x_[j] = af * x_[j] + bf * drive * (1.0 + c.beta * d_);
                filtered_[j] += alpha * (x_[j] - filtered_[j]);
            }
            ++fine_;
            d_ = disturbance_now();
            dfilt_ += alpha * (d_ - dfilt_);
        }
        sample_noise();
    }

private:
    static constexpr double kPi = 3.14159265358979323846;

    [[nodiscard]] bool smoothing() const { return spec_.measurement_smoothing > 0.0; }

    double disturbance_now() {
        const auto& ds = spec_.disturbance;
        const double m = spec_.substeps;
        if (ds.noise_std > 0.0) {
            std::normal_distribution<double> nd(0.0, 1.0);
            const double a = std::exp(-1.0 / (ds.noise_smoothing * m));
            // stationary AR(1) with standard deviation noise_std
            dnoise_ = a * dnoise_ + std::sqrt(1.0 - a * a) * ds.noise_std * nd(rng_);
        }
        const double t = static_cast<double>(fine_) / m;
        return ds.offset + ds.amplitude * std::sin(2.0 * kPi * t / ds.period + phase_) + dnoise_;
    }

    void sample_noise() {
        noise_.assign(spec_.size(), 0.0);
        for (std::size_t j = 0; j < spec_.size(); ++j)
            if (spec_.channels[j].noise_std > 0.0) {
                std::normal_distribution<double> nd(0.0, spec_.channels[j].noise_std);
                noise_[j] = nd(noise_rng_);
            }
    }

    PlantSpec spec_;
    std::mt19937_64 rng_, noise_rng_;
    double phase_ = 0.0, dnoise_ = 0.0, d_ = 0.0, dfilt_ = 0.0;
    long fine_ = 0;
    std::vector<double> x_, filtered_, noise_;
};

/// Open-loop simulation: u(k) is applied at sample k; returns the measured
/// dataset (u, d, y) with y(0) the initial output.
[[nodiscard]] inline TimeSeriesDataset simulate_plant(const PlantSpec& spec,
                                                      const std::vector<std::vector<double>>& u,
                                                      std::uint64_t seed) {
    ValvePlant plant(spec);
    if (u.size() != plant.input_count())
        throw ShapeError("plant expects " + std::to_string(plant.input_count()) + " input series");
    const std::size_t L = u.front().size();
    if (L == 0)
        throw ShapeError("input series is empty");
    for (const auto& ch : u)
        if (ch.size() != L)
            throw ShapeError("input series differ in length");
    plant.reset(seed);
    TimeSeriesDataset ds;
    ds.sample_period = spec.sample_period;
    ds.u = u;
    ds.d.assign(1, std::vector<double>(L));
    ds.y.assign(plant.output_count(), std::vector<double>(L));
    VectorXd uk(static_cast<Eigen::Index>(u.size()));
    for (std::size_t k = 0; k < L; ++k) {
        const VectorXd y = plant.measured_outputs();
        for (std::size_t j = 0; j < ds.y.size(); ++j)
            ds.y[j][k] = y[static_cast<Eigen::Index>(j)];
        ds.d[0][k] = plant.measured_disturbance()[0];
        for (std::size_t j = 0; j < u.size(); ++j)
            uk[static_cast<Eigen::Index>(j)] = u[j][k];
        plant.advance(uk);
    }
    return ds;
}

/// An LPV model used as a plant. Disturbances are replayed from a series.
class LpvPlant final : public Plant {
public:
    LpvPlant(LpvStateSpace model, VectorXd initial_state, std::vector<std::vector<double>> disturbance = {})
        : ss_(std::move(model)), x0_(std::move(initial_state)), d_(std::move(disturbance)) {
        if (static_cast<std::size_t>(x0_.size()) != ss_.state_dim())
            throw ShapeError("initial state has wrong dimension");
        if (d_.size() != ss_.disturbance_count())
            throw ShapeError("disturbance series arity does not match the model");
        reset(0);
    }

    void reset(std::uint64_t) override {
        x_ = x0_;
        k_ = 0;
    }
    [[nodiscard]] std::size_t input_count() const override { return ss_.input_count(); }
    [[nodiscard]] std::size_t disturbance_count() const override { return ss_.disturbance_count(); }
    [[nodiscard]] std::size_t output_count() const override { return ss_.output_count(); }
    [[nodiscard]] VectorXd measured_outputs() const override { return ss_.output(x_); }
    [[nodiscard]] VectorXd measured_disturbance() const override { return disturbance_at(k_); }
    void advance(const VectorXd& u) override {
        x_ = ss_.step(x_, u, disturbance_at(k_));
        ++k_;
    }

private:
    [[nodiscard]] VectorXd disturbance_at(std::size_t k) const {
        VectorXd d(static_cast<Eigen::Index>(d_.size()));
        for (std::size_t c = 0; c < d_.size(); ++c)
            d[static_cast<Eigen::Index>(c)] = d_[c].empty() ? 0.0 : d_[c][std::min(k, d_[c].size() - 1)];
        return d;
    }

    LpvStateSpace ss_;
    VectorXd x0_, x_;
    std::vector<std::vector<double>> d_;
    std::size_t k_ = 0;
};

// ----------------------------------------------------------------------------
// Closed-loop evaluation
// ----------------------------------------------------------------------------

struct ClosedLoopReport {
    std::vector<std::vector<double>> u;     // u(0..L-1)
    std::vector<std::vector<double>> y;     // measured y(1..L)
    std::vector<std::vector<double>> y_des; // desired y(1..L)
    std::vector<std::vector<double>> d;     // measured d(0..L-1)
    std::vector<double> rmse;               // per output over y(k), k >= transient
    std::vector<double> reference_rms;      // rms of the desired output over the same window
    std::size_t transient = 0;
};

/// Pure feedforward run: the controller sees only the reference and, when it
/// has a disturbance channel, the measured disturbance d(k-1).
[[nodiscard]] inline ClosedLoopReport closed_loop_eval(Plant& plant, FeedforwardController& ctrl,
                                                       const std::vector<std::vector<double>>& reference,
                                                       std::uint64_t seed, std::size_t transient = 0) {
    const auto& ss = ctrl.model();
    if (ss.input_count() != plant.input_count() || ss.output_count() != plant.output_count())
        throw ShapeError("controller arity (" + std::to_string(ss.input_count()) + " in, " +
                         std::to_string(ss.output_count()) + " out) does not match the plant (" +
                         std::to_string(plant.input_count()) + " in, " +
                         std::to_string(plant.output_count()) + " out)");
    if (ss.disturbance_count() > plant.disturbance_count())
        throw ShapeError("controller expects more disturbance channels than the plant measures");
    if (reference.size() != ss.output_count())
        throw ShapeError("reference arity does not match the controller");
    const std::size_t L = reference.front().size();
    for (const auto& r : reference)
        if (r.size() != L)
            throw ShapeError("reference channels differ in length");
    const auto shift = static_cast<std::size_t>(ctrl.shift());
    if (transient == 0)
        transient = shift;
    if (L <= transient)
        throw InsufficientDataError("reference shorter than the evaluation transient");

    const auto dd = static_cast<Eigen::Index>(ss.disturbance_count());
    auto column = [](const std::vector<std::vector<double>>& s, std::size_t k) {
        VectorXd v(static_cast<Eigen::Index>(s.size()));
        for (std::size_t c = 0; c < s.size(); ++c)
            v[static_cast<Eigen::Index>(c)] = s[c][k];
        return v;
    };

    ClosedLoopReport rep;
    rep.transient = transient;
    rep.u.assign(ss.input_count(), std::vector<double>(L));
    rep.y.assign(ss.output_count(), std::vector<double>(L));
    rep.y_des.assign(ss.output_count(), std::vector<double>(L));
    rep.d.assign(plant.disturbance_count(), std::vector<double>(L));

    plant.reset(seed);
    VectorXd dprev = plant.measured_disturbance();
    ctrl.reset(column(reference, 0), dprev.head(dd));
    const auto delta = static_cast<std::size_t>(ctrl.relative_degree());
    for (std::size_t k = 0; k < L; ++k) {
        const VectorXd dk = plant.measured_disturbance();
        for (std::size_t c = 0; c < rep.d.size(); ++c)
            rep.d[c][k] = dk[static_cast<Eigen::Index>(c)];
        const VectorXd u = ctrl.step(column(reference, k), dprev.head(dd));
        if (!u.allFinite())
            throw DivergenceError("controller produced a non-finite input at step " + std::to_string(k));
        plant.advance(u);
        dprev = dk;
        const VectorXd y = plant.measured_outputs();
        for (std::size_t j = 0; j < rep.u.size(); ++j)
            rep.u[j][k] = u[static_cast<Eigen::Index>(j)];
        for (std::size_t c = 0; c < rep.y.size(); ++c) {
            rep.y[c][k] = y[static_cast<Eigen::Index>(c)];
            rep.y_des[c][k] = k >= delta ? reference[c][k - delta] : reference[c][0];
        }
    }
    for (std::size_t c = 0; c < rep.y.size(); ++c) {
        std::span<const double> y(rep.y[c]), yd(rep.y_des[c]);
        const auto a = y.subspan(transient - 1), b = yd.subspan(transient - 1);
        rep.rmse.push_back(rmse(a, b));
        double s = 0.0;
        for (double v : b)
            s += v * v;
        rep.reference_rms.push_back(std::sqrt(s / static_cast<double>(b.size())));
    }
    return rep;
}

} // namespace lmnff
