// Command line front end: train, predict, synthesize, certify, simulate, eval, report.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include <lmnff/lmnff.hpp>

namespace fs = std::filesystem;
using namespace lmnff;

namespace {

struct Common {
    std::string config;
    std::string model;
    std::string data;
    std::string out;
    std::string format = "json";
    std::string variant;
    std::optional<std::uint64_t> seed;
};

fs::path output_dir(const Common& c, const std::string& command) {
    const char* env = std::getenv("LMNFF_OUTPUT_ROOT");
    const bool overridden = env && *env;
    const fs::path root = overridden ? fs::path(env) : fs::path("runs");
    fs::path dir = c.out.empty() ? root / command : fs::path(c.out);
    if (dir.is_relative() && !c.out.empty() && overridden)
        dir = root / dir;
    fs::create_directories(dir);
    return dir;
}

/// Prints a flat summary as JSON or as key,value CSV lines.
void emit(const json& summary, const std::string& format) {
    if (format == "json") {
        std::cout << summary.dump(2) << '\n';
        return;
    }
    std::cout << "key,value\n";
    for (const auto& [k, v] : summary.items())
        std::cout << k << ',' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
}

ExperimentConfig config_or_throw(const Common& c) {
    if (c.config.empty())
        throw SchemaError("--config is required for this command");
    auto cfg = load_config(c.config);
    if (c.seed)
        cfg.train_seed = *c.seed;
    return cfg;
}

ModelStore model_or_throw(const Common& c) {
    if (c.model.empty())
        throw SchemaError("--model is required for this command");
    return load_store(c.model);
}

LpvStateSpace store_state_space(const ModelStore& s) { return variant_state_space(s.kind, s.models); }

void check_arity(const ModelStore& s, const TimeSeriesDataset& ds) {
    const auto& dl = s.models.front().delays();
    if (dl.input_count() != ds.u.size() || s.models.size() != ds.y.size() ||
        dl.disturbance_count() > ds.d.size())
        throw ShapeError("arity mismatch: model has " + std::to_string(dl.input_count()) + " input(s), " +
                         std::to_string(dl.disturbance_count()) + " disturbance(s), " +
                         std::to_string(s.models.size()) + " output(s); dataset has " +
                         std::to_string(ds.u.size()) + ", " + std::to_string(ds.d.size()) + ", " +
                         std::to_string(ds.y.size()));
}

int cmd_train(const Common& c) {
    const auto cfg = config_or_throw(c);
    const auto v = c.variant.empty() ? cfg.variants.front() : variant_from_string(c.variant);
    const auto data = c.data.empty() ? training_data(cfg) : load_dataset(c.data);
    const auto models = train_variant(cfg, v, data);
    ModelStore store;
    store.kind = variant_kind(cfg, v);
    store.models = models;
    store.metadata = {{"seed", cfg.train_seed},
                      {"config_hash", content_hash(to_json(cfg))},
                      {"variant", to_string(v)}};
    const auto dir = output_dir(c, "train");
    save_store(dir / "model.json", store);
    json lm = json::array();
    for (const auto& m : models)
        lm.push_back(m.net().size());
    emit({{"model", (dir / "model.json").string()},
          {"variant", to_string(v)},
          {"local_models", lm},
          {"model_hash", content_hash(store_to_json(store))}},
         c.format);
    return 0;
}

int cmd_predict(const Common& c) {
    const auto store = model_or_throw(c);
    if (c.data.empty())
        throw SchemaError("--data is required for predict");
    const auto ds = load_dataset(c.data);
    check_arity(store, ds);
    std::size_t seed = 0;
    const auto pred = free_run_on_dataset(store.models, ds, &seed);
    const auto dir = output_dir(c, "predict");
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    json rm = json::array();
    for (std::size_t j = 0; j < pred.size(); ++j) {
        cols.emplace_back("y" + std::to_string(j + 1), ds.y[j]);
        cols.emplace_back("y" + std::to_string(j + 1) + "_predicted", pred[j]);
        std::span<const double> p(pred[j]), y(ds.y[j]);
        rm.push_back(rmse(p.subspan(seed), y.subspan(seed)));
    }
    write_columns_csv(dir / "predictions.csv", cols);
    emit({{"predictions", (dir / "predictions.csv").string()}, {"prediction_rmse", rm}}, c.format);
    return 0;
}

int cmd_synthesize(const Common& c) {
    const auto store = model_or_throw(c);
    const auto ctrl = synthesize(store_state_space(store));
    const json summary = {{"kind", to_string(ctrl.kind())},
                          {"relative_degree", ctrl.relative_degree()},
                          {"reference_shift", ctrl.shift()},
                          {"state_dimension", ctrl.model().state_dim()},
                          {"inputs", ctrl.model().input_count()},
                          {"outputs", ctrl.model().output_count()}};
    write_json(output_dir(c, "synthesize") / "controller.json", summary);
    emit(summary, c.format);
    return 0;
}

int cmd_certify(const Common& c) {
    auto store = model_or_throw(c);
    json cert;
    if (store.models.size() == 1) {
        cert = certificate_to_json(assess_stability(store.models.front()));
    } else {
        cert = {{"verdict", to_string(Verdict::NotCertified)},
                {"reason", "the Lyapunov criterion covers single-output models only"}};
    }
    const auto dir = output_dir(c, "certify");
    write_json(dir / "certificate.json", cert);
    store.certificate = cert;
    save_store(dir / "model.json", store);
    emit(cert, c.format);
    return 0;
}

int cmd_simulate(const Common& c) {
    const auto cfg = config_or_throw(c);
    const auto ds = training_data(cfg);
    const auto dir = output_dir(c, "simulate");
    save_dataset(dir / "data.csv", ds);
    emit({{"data", (dir / "data.csv").string()},
          {"length", ds.length()},
          {"inputs", ds.u.size()},
          {"outputs", ds.y.size()}},
         c.format);
    return 0;
}

int cmd_eval(const Common& c) {
    const auto store = model_or_throw(c);
    const auto dir = output_dir(c, "eval");
    if (!c.data.empty()) {
        const auto ds = load_dataset(c.data);
        check_arity(store, ds);
        std::size_t seed = 0;
        const auto pred = free_run_on_dataset(store.models, ds, &seed);
        json rm = json::array();
        for (std::size_t j = 0; j < pred.size(); ++j) {
            std::span<const double> p(pred[j]), y(ds.y[j]);
            rm.push_back(rmse(p.subspan(seed), y.subspan(seed)));
        }
        const json summary = {{"prediction_rmse", rm}};
        write_json(dir / "eval.json", summary);
        emit(summary, c.format);
        return 0;
    }
    auto cfg = config_or_throw(c);
    auto ctrl = synthesize(store_state_space(store));
    ValvePlant plant(cfg.plant);
    const std::uint64_t seed = c.seed ? *c.seed : cfg.eval_seeds.front();
    const auto rep = closed_loop_eval(plant, ctrl, reference_signals(cfg, seed), seed);
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    for (std::size_t j = 0; j < rep.u.size(); ++j)
        cols.emplace_back("u" + std::to_string(j + 1), rep.u[j]);
    for (std::size_t j = 0; j < rep.y.size(); ++j) {
        cols.emplace_back("y" + std::to_string(j + 1) + "_next", rep.y[j]);
        cols.emplace_back("y" + std::to_string(j + 1) + "_desired_next", rep.y_des[j]);
    }
    write_columns_csv(dir / "traces.csv", cols);
    const json summary = {{"tracking_rmse", rep.rmse}, {"reference_rms", rep.reference_rms}, {"seed", seed}};
    write_json(dir / "eval.json", summary);
    emit(summary, c.format);
    return 0;
}

int cmd_report(const Common& c) {
    const auto cfg = config_or_throw(c);
    const auto dir = output_dir(c, "report");
    const auto rep = run_experiment(cfg, dir);
    if (c.format == "json") {
        std::cout << rep.metrics["variants"].dump(2) << '\n';
    } else {
        std::cout << "variant,channel,prediction_rmse,tracking_rmse_mean,tracking_rmse_std,certification\n";
        for (const auto& [name, m] : rep.metrics["variants"].items()) {
            const auto& pr = m["prediction_rmse"];
            for (std::size_t j = 0; j < pr.size(); ++j)
                std::cout << name << ',' << j + 1 << ',' << pr[j].dump() << ','
                          << (j < m["tracking_rmse_mean"].size() ? m["tracking_rmse_mean"][j].dump() : "")
                          << ','
                          << (j < m["tracking_rmse_std"].size() ? m["tracking_rmse_std"][j].dump() : "")
                          << ',' << m["certification"].get<std::string>() << '\n';
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local model network feedforward control toolkit"};
    app.require_subcommand(1);
    Common c;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", c.seed, "Random seed (overrides the training seed)");
        sub->add_option("--out", c.out, "Output directory");
        sub->add_option("--format", c.format, "Summary format")->check(CLI::IsMember({"csv", "json"}));
    };
    struct Cmd {
        const char* name;
        const char* help;
        int (*run)(const Common&);
        bool config, model, data, variant;
    };
    const std::vector<Cmd> cmds = {
        {"train", "Train local model networks", cmd_train, true, false, true, true},
        {"predict", "Free-run prediction on a dataset", cmd_predict, false, true, true, false},
        {"synthesize", "Derive the feedforward controller", cmd_synthesize, false, true, false, false},
        {"certify", "Stability verdict for the controller", cmd_certify, false, true, false, false},
        {"simulate", "Simulate the configured plant", cmd_simulate, true, false, false, false},
        {"eval", "Evaluate a model on a dataset or in closed loop", cmd_eval, true, true, true, false},
        {"report", "Run the full experiment pipeline", cmd_report, true, false, false, false},
    };
    int (*selected)(const Common&) = nullptr;
    for (const auto& cmd : cmds) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        add_common(sub);
        if (cmd.config)
            sub->add_option("--config", c.config, "Experiment configuration (JSON)");
        if (cmd.model)
            sub->add_option("--model", c.model, "Model store (JSON)");
        if (cmd.data)
            sub->add_option("--data", c.data, "Dataset (CSV)");
        if (cmd.variant)
            sub->add_option("--variant", c.variant, "Controller variant")
                ->check(CLI::IsMember({"siso", "siso_disturbance", "mimo"}));
        sub->callback([&selected, run = cmd.run] { selected = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        return selected(c);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.category() == ErrorCategory::Validation ? 1 : 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
