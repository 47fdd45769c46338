#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "io.hpp"
#include "plant.hpp"
#include "training.hpp"

namespace lmnff {

enum class ControllerVariant { Siso, SisoDisturbance, Mimo };

[[nodiscard]] inline const char* to_string(ControllerVariant v) {
    switch (v) {
    case ControllerVariant::Siso: return "siso";
    case ControllerVariant::SisoDisturbance: return "siso_disturbance";
    default: return "mimo";
    }
}

[[nodiscard]] inline ControllerVariant variant_from_string(const std::string& s) {
    if (s == "siso")
        return ControllerVariant::Siso;
    if (s == "siso_disturbance")
        return ControllerVariant::SisoDisturbance;
    if (s == "mimo")
        return ControllerVariant::Mimo;
    throw SchemaError("unknown controller variant '" + s + "'");
}

/// Delays shared by every channel of an experiment.
struct ExperimentDelays {
    std::vector<int> input{1};
    std::vector<int> disturbance{1};
    std::vector<int> output{1};
    std::vector<int> disturbance_validity{1};
    std::vector<int> output_validity{1};
};

struct ExperimentConfig {
    std::string name = "experiment";
    PlantSpec plant;
    ExcitationConfig excitation;      // duration = training length
    std::size_t validation_duration = 1000;
    ReferenceConfig reference;
    ExperimentDelays delays;
    LolimotConfig lolimot;
    std::vector<ControllerVariant> variants{ControllerVariant::Siso};
    bool certify = true;
    std::uint64_t train_seed = 1;
    std::vector<std::uint64_t> eval_seeds{101};
    std::string output_dir = "runs/experiment";
};

// ----------------------------------------------------------------------------
// JSON mapping
// ----------------------------------------------------------------------------

[[nodiscard]] inline json to_json(const ExperimentConfig& c) {
    json channels = json::array();
    for (const auto& ch : c.plant.channels)
        channels.push_back({{"a", ch.a},
                            {"gain", ch.gain},
                            {"deadzone", ch.deadzone},
                            {"saturation", ch.saturation},
                            {"beta", ch.beta},
                            {"noise_std", ch.noise_std}});
    const auto& ds = c.plant.disturbance;
    json variants = json::array();
    for (auto v : c.variants)
        variants.push_back(to_string(v));
    return {
        {"name", c.name},
        {"plant",
         {{"kind", c.plant.kind == PlantKind::SisoValve ? "siso_valve" : "mimo_coupled"},
          {"channels", channels},
          {"coupling", c.plant.coupling},
          {"disturbance",
           {{"offset", ds.offset},
            {"amplitude", ds.amplitude},
            {"period", ds.period},
            {"noise_std", ds.noise_std},
            {"noise_smoothing", ds.noise_smoothing}}},
          {"substeps", c.plant.substeps},
          {"measurement_smoothing", c.plant.measurement_smoothing},
          {"sample_period", c.plant.sample_period}}},
        {"excitation",
         {{"amplitude_min", c.excitation.amplitude_min},
          {"amplitude_max", c.excitation.amplitude_max},
          {"hold_min", c.excitation.hold_min},
          {"hold_max", c.excitation.hold_max},
          {"train_duration", c.excitation.duration},
          {"validation_duration", c.validation_duration}}},
        {"reference",
         {{"amplitude", c.reference.amplitude},
          {"hold_min", c.reference.hold_min},
          {"hold_max", c.reference.hold_max},
          {"smoothing", c.reference.smoothing},
          {"duration", c.reference.duration}}},
        {"delays",
         {{"input", c.delays.input},
          {"disturbance", c.delays.disturbance},
          {"output", c.delays.output},
          {"disturbance_validity", c.delays.disturbance_validity},
          {"output_validity", c.delays.output_validity}}},
        {"lolimot",
         {{"max_models", c.lolimot.max_models},
          {"width_factor", c.lolimot.width_factor},
          {"ridge", c.lolimot.ridge},
          {"min_points", c.lolimot.min_points}}},
        {"variants", variants},
        {"certify", c.certify},
        {"seeds", {{"train", c.train_seed}, {"eval", c.eval_seeds}}},
        {"output_dir", c.output_dir},
    };
}

/// Missing fields keep their defaults; unknown variants or plant kinds are rejected.
[[nodiscard]] inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    try {
        c.name = j.value("name", c.name);
        if (j.contains("plant")) {
            const auto& p = j["plant"];
            const std::string kind = p.value("kind", std::string("siso_valve"));
            if (kind == "siso_valve")
                c.plant.kind = PlantKind::SisoValve;
            else if (kind == "mimo_coupled")
                c.plant.kind = PlantKind::MimoCoupled;
            else
                throw SchemaError("unknown plant kind '" + kind + "'");
            c.plant.channels.clear();
            if (p.contains("channels"))
                for (const auto& ch : p["channels"]) {
                    ValveChannel v;
                    v.a = ch.value("a", v.a);
                    v.gain = ch.value("gain", v.gain);
                    v.deadzone = ch.value("deadzone", v.deadzone);
                    v.saturation = ch.value("saturation", v.saturation);
                    v.beta = ch.value("beta", v.beta);
                    v.noise_std = ch.value("noise_std", v.noise_std);
                    c.plant.channels.push_back(v);
                }
            if (c.plant.channels.empty())
                c.plant.channels.assign(c.plant.kind == PlantKind::SisoValve ? 1 : 2, ValveChannel{});
            c.plant.coupling = p.value("coupling", 0.0);
            if (p.contains("disturbance")) {
                const auto& d = p["disturbance"];
                auto& ds = c.plant.disturbance;
                ds.offset = d.value("offset", ds.offset);
                ds.amplitude = d.value("amplitude", ds.amplitude);
                ds.period = d.value("period", ds.period);
                ds.noise_std = d.value("noise_std", ds.noise_std);
                ds.noise_smoothing = d.value("noise_smoothing", ds.noise_smoothing);
            }
            c.plant.substeps = p.value("substeps", 1);
            c.plant.measurement_smoothing = p.value("measurement_smoothing", 0.0);
            c.plant.sample_period = p.value("sample_period", 1.0);
        }
        if (j.contains("excitation")) {
            const auto& e = j["excitation"];
            c.excitation.amplitude_min = e.value("amplitude_min", c.excitation.amplitude_min);
            c.excitation.amplitude_max = e.value("amplitude_max", c.excitation.amplitude_max);
            c.excitation.hold_min = e.value("hold_min", c.excitation.hold_min);
            c.excitation.hold_max = e.value("hold_max", c.excitation.hold_max);
            c.excitation.duration = e.value("train_duration", c.excitation.duration);
            c.validation_duration = e.value("validation_duration", c.validation_duration);
        }
        if (j.contains("reference")) {
            const auto& r = j["reference"];
            c.reference.amplitude = r.value("amplitude", c.reference.amplitude);
            c.reference.hold_min = r.value("hold_min", c.reference.hold_min);
            c.reference.hold_max = r.value("hold_max", c.reference.hold_max);
            c.reference.smoothing = r.value("smoothing", c.reference.smoothing);
            c.reference.duration = r.value("duration", c.reference.duration);
        }
        if (j.contains("delays")) {
            const auto& d = j["delays"];
            c.delays.input = d.value("input", c.delays.input);
            c.delays.disturbance = d.value("disturbance", c.delays.disturbance);
            c.delays.output = d.value("output", c.delays.output);
            c.delays.disturbance_validity = d.value("disturbance_validity", c.delays.disturbance_validity);
            c.delays.output_validity = d.value("output_validity", c.delays.output_validity);
        }
        if (j.contains("lolimot")) {
            const auto& l = j["lolimot"];
            c.lolimot.max_models = l.value("max_models", c.lolimot.max_models);
            c.lolimot.width_factor = l.value("width_factor", c.lolimot.width_factor);
            c.lolimot.ridge = l.value("ridge", c.lolimot.ridge);
            c.lolimot.min_points = l.value("min_points", c.lolimot.min_points);
        }
        if (j.contains("variants")) {
            c.variants.clear();
            for (const auto& v : j["variants"])
                c.variants.push_back(variant_from_string(v.get<std::string>()));
        }
        c.certify = j.value("certify", c.certify);
        if (j.contains("seeds")) {
            c.train_seed = j["seeds"].value("train", c.train_seed);
            c.eval_seeds = j["seeds"].value("eval", c.eval_seeds);
        }
        c.output_dir = j.value("output_dir", c.output_dir);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed experiment config: ") + e.what());
    }
    c.plant.validate();
    if (c.variants.empty())
        throw SchemaError("experiment needs at least one controller variant");
    if (c.eval_seeds.empty())
        throw SchemaError("experiment needs at least one evaluation seed");
    return c;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path) {
    return config_from_json(read_json(path));
}

// ----------------------------------------------------------------------------
// Pipeline stages
// ----------------------------------------------------------------------------

/// Excitation for every plant input; channel j uses seed + 7919 j.
[[nodiscard]] inline std::vector<std::vector<double>> excitation_signals(const ExperimentConfig& c,
                                                                        std::size_t duration,
                                                                        std::uint64_t seed) {
    std::vector<std::vector<double>> u;
    for (std::size_t j = 0; j < c.plant.size(); ++j) {
        ExcitationConfig e = c.excitation;
        e.duration = duration;
        e.seed = seed + 7919ULL * j;
        u.push_back(generate_excitation(e));
    }
    return u;
}

[[nodiscard]] inline TimeSeriesDataset training_data(const ExperimentConfig& c) {
    return simulate_plant(c.plant, excitation_signals(c, c.excitation.duration, c.train_seed), c.train_seed);
}

[[nodiscard]] inline TimeSeriesDataset validation_data(const ExperimentConfig& c) {
    const std::uint64_t s = c.train_seed + 1000003ULL;
    return simulate_plant(c.plant, excitation_signals(c, c.validation_duration, s), s);
}

[[nodiscard]] inline std::vector<std::vector<double>> reference_signals(const ExperimentConfig& c,
                                                                       std::uint64_t seed) {
    std::vector<std::vector<double>> r;
    for (std::size_t j = 0; j < c.plant.size(); ++j) {
        ReferenceConfig rc = c.reference;
        rc.seed = seed + 104729ULL * j;
        r.push_back(generate_reference(rc));
    }
    return r;
}

/// Delay configuration of the network predicting output `target`.
[[nodiscard]] inline DelayConfig variant_delays(const ExperimentConfig& c, ControllerVariant v,
                                                std::size_t target) {
    const std::size_t n = c.plant.size();
    DelayConfig d;
    for (std::size_t j = 0; j < n; ++j)
        d.inputs.push_back(v == ControllerVariant::Mimo || j == target ? DelaySet{c.delays.input, {}}
                                                                        : DelaySet{});
    if (v == ControllerVariant::SisoDisturbance)
        d.disturbances.push_back({c.delays.disturbance, c.delays.disturbance_validity});
    for (std::size_t j = 0; j < n; ++j)
        d.outputs.push_back(j == target ? DelaySet{c.delays.output, c.delays.output_validity} : DelaySet{});
    d.normalize();
    d.validate();
    return d;
}

[[nodiscard]] inline LpvKind variant_kind(const ExperimentConfig& c, ControllerVariant v) {
    if (c.plant.size() > 1)
        return LpvKind::Mimo;
    return v == ControllerVariant::SisoDisturbance ? LpvKind::SisoDisturbance : LpvKind::Siso;
}

[[nodiscard]] inline std::vector<NarxModel> train_variant(const ExperimentConfig& c, ControllerVariant v,
                                                          const TimeSeriesDataset& data) {
    if (v == ControllerVariant::Mimo && c.plant.size() < 2)
        throw WrongKindError("the MIMO variant needs a multi-channel plant");
    std::vector<NarxModel> models;
    for (std::size_t t = 0; t < c.plant.size(); ++t)
        models.push_back(train_narx(data, variant_delays(c, v, t), c.lolimot, t));
    return models;
}

[[nodiscard]] inline LpvStateSpace variant_state_space(LpvKind kind, const std::vector<NarxModel>& models) {
    switch (kind) {
    case LpvKind::Siso: return to_lpv_siso(models.front());
    case LpvKind::SisoDisturbance: return to_lpv_disturbance(models.front());
    default: return to_lpv_mimo(models);
    }
}

/// Per-channel free-run RMSE on a dataset, excluding the seed samples.
[[nodiscard]] inline std::vector<double> prediction_rmse(const std::vector<NarxModel>& models,
                                                         const TimeSeriesDataset& data) {
    std::size_t seed = 0;
    const auto pred = free_run_on_dataset(models, data, &seed);
    std::vector<double> out;
    for (std::size_t c = 0; c < pred.size(); ++c) {
        std::span<const double> p(pred[c]), y(data.y[c]);
        out.push_back(rmse(p.subspan(seed), y.subspan(seed)));
    }
    return out;
}

struct VariantResult {
    ControllerVariant variant = ControllerVariant::Siso;
    std::vector<NarxModel> models;
    std::vector<double> prediction_rmse;
    std::vector<std::vector<double>> tracking_rmse; // [seed][channel]
    std::vector<double> tracking_mean;
    std::vector<double> tracking_std;
    std::string verdict = "skipped";
    json certificate;
    std::optional<ClosedLoopReport> first_trace;
    std::string failed_stage;
    std::string error;
};

namespace detail {
inline void mean_std(const std::vector<std::vector<double>>& runs, std::vector<double>& mean,
                     std::vector<double>& sd) {
    mean.clear();
    sd.clear();
    if (runs.empty())
        return;
    const std::size_t ch = runs.front().size();
    const auto n = static_cast<double>(runs.size());
    for (std::size_t c = 0; c < ch; ++c) {
        double m = 0.0;
        for (const auto& r : runs)
            m += r[c];
        m /= n;
        double v = 0.0;
        for (const auto& r : runs)
            v += (r[c] - m) * (r[c] - m);
        mean.push_back(m);
        sd.push_back(runs.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0);
    }
}
} // namespace detail

/// Trains, synthesizes, optionally certifies and evaluates one controller
/// variant. Stage failures are recorded rather than thrown.
[[nodiscard]] inline VariantResult run_variant(const ExperimentConfig& c, ControllerVariant v,
                                               const TimeSeriesDataset& train,
                                               const TimeSeriesDataset& valid) {
    VariantResult r;
    r.variant = v;
    std::string stage = "train";
    try {
        r.models = train_variant(c, v, train);
        stage = "predict";
        r.prediction_rmse = prediction_rmse(r.models, valid);
        if (c.certify) {
            stage = "certify";
            if (r.models.size() == 1) {
                const auto a = assess_stability(r.models.front());
                r.verdict = to_string(a.verdict);
                r.certificate = certificate_to_json(a);
            } else {
                r.verdict = to_string(Verdict::NotCertified);
                r.certificate = {{"verdict", r.verdict},
                                 {"reason", "the Lyapunov criterion covers single-output models only"}};
            }
        }
        stage = "synthesize";
        const auto ss = variant_state_space(variant_kind(c, v), r.models);
        auto ctrl = synthesize(ss);
        stage = "evaluate";
        ValvePlant plant(c.plant);
        for (auto seed : c.eval_seeds) {
            auto rep = closed_loop_eval(plant, ctrl, reference_signals(c, seed), seed);
            r.tracking_rmse.push_back(rep.rmse);
            if (!r.first_trace)
                r.first_trace = std::move(rep);
        }
        detail::mean_std(r.tracking_rmse, r.tracking_mean, r.tracking_std);
    } catch (const Error& e) {
        r.failed_stage = stage;
        r.error = e.what();
    }
    return r;
}

struct ExperimentReport {
    json metrics;
    std::filesystem::path directory;
    std::vector<VariantResult> variants;
};

/// Full pipeline. Writes metrics.json, config.json, and per variant
/// model_<v>.json, certificate_<v>.json and traces_<v>.csv into `directory`.
[[nodiscard]] inline ExperimentReport run_experiment(const ExperimentConfig& c,
                                                     const std::filesystem::path& directory) {
    ExperimentReport rep;
    rep.directory = directory;
    std::filesystem::create_directories(directory);
    const json cfg = to_json(c);
    const std::string hash = content_hash(cfg);
    write_json(directory / "config.json", cfg);

    const auto train = training_data(c);
    const auto valid = validation_data(c);
    save_dataset(directory / "train.csv", train);

    json variants = json::object();
    for (auto v : c.variants) {
        auto r = run_variant(c, v, train, valid);
        const std::string name = to_string(v);
        json m = {{"prediction_rmse", r.prediction_rmse},
                  {"tracking_rmse_runs", r.tracking_rmse},
                  {"tracking_rmse_mean", r.tracking_mean},
                  {"tracking_rmse_std", r.tracking_std},
                  {"certification", r.verdict}};
        json lm = json::array();
        for (const auto& model : r.models)
            lm.push_back(model.net().size());
        m["local_models"] = lm;
        if (!r.failed_stage.empty())
            m["failure"] = {{"stage", r.failed_stage}, {"error", r.error}};
        variants[name] = m;

        if (!r.models.empty()) {
            ModelStore store;
            store.kind = variant_kind(c, v);
            store.models = r.models;
            store.metadata = {{"seed", c.train_seed}, {"config_hash", hash}, {"variant", name}};
            if (!r.certificate.is_null())
                store.certificate = r.certificate;
            save_store(directory / ("model_" + name + ".json"), store);
        }
        if (!r.certificate.is_null())
            write_json(directory / ("certificate_" + name + ".json"), r.certificate);
        if (r.first_trace) {
            std::vector<std::pair<std::string, std::vector<double>>> cols;
            const auto& t = *r.first_trace;
            std::vector<double> k(t.u.front().size());
            for (std::size_t i = 0; i < k.size(); ++i)
                k[i] = static_cast<double>(i);
            cols.emplace_back("k", k);
            for (std::size_t j = 0; j < t.u.size(); ++j)
                cols.emplace_back("u" + std::to_string(j + 1), t.u[j]);
            for (std::size_t j = 0; j < t.d.size(); ++j)
                cols.emplace_back("d" + std::to_string(j + 1), t.d[j]);
            for (std::size_t j = 0; j < t.y.size(); ++j) {
                cols.emplace_back("y" + std::to_string(j + 1) + "_next", t.y[j]);
                cols.emplace_back("y" + std::to_string(j + 1) + "_desired_next", t.y_des[j]);
            }
            write_columns_csv(directory / ("traces_" + name + ".csv"), cols);
        }
        rep.variants.push_back(std::move(r));
    }
    rep.metrics = {{"config", cfg}, {"config_hash", hash}, {"variants", variants}};
    write_json(directory / "metrics.json", rep.metrics);
    return rep;
}

} // namespace lmnff
