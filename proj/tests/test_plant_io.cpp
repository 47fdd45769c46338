#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "test_support.hpp"

using namespace lmnff;
using namespace lmnff::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    fs::path p = fs::temp_directory_path() / "lmnff_tests" / (std::string(info->test_suite_name()) + "_" +
                                                               info->name()) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig smoke_config() { return load_config(fs::path(LMNFF_CONFIG_DIR) / "identity_smoke.json"); }
ExperimentConfig disturbance_config() {
    return load_config(fs::path(LMNFF_CONFIG_DIR) / "siso_disturbance.json");
}

PlantSpec linear_spec(double a, double beta = 0.0) {
    PlantSpec s;
    s.channels = {ValveChannel{a, 1.0, 0.0, 100.0, beta, 0.0}};
    s.disturbance.noise_std = 0.0;
    return s;
}

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun cli(const std::string& args, const fs::path& dir) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = "env -u LMNFF_OUTPUT_ROOT \"" + std::string(LMNFF_CLI_PATH) + "\" " + args + " > \"" +
                            out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

} // namespace

// ---------------------------------------------------------------------------
// plant_sim
// ---------------------------------------------------------------------------

TEST(Excitation, DeterministicBoundedPlateaus) {
    ExcitationConfig cfg{-0.5, 2.0, 3, 9, 2000, 17};
    const auto a = generate_excitation(cfg), b = generate_excitation(cfg);
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 2000u);
    cfg.seed = 18;
    EXPECT_NE(generate_excitation(cfg), a);
    for (double v : a) {
        EXPECT_GE(v, -0.5);
        EXPECT_LE(v, 2.0);
    }
    std::size_t run = 1;
    for (std::size_t k = 1; k < a.size(); ++k) {
        if (a[k] == a[k - 1]) {
            ++run;
            continue;
        }
        EXPECT_GE(run, 3u);
        EXPECT_LE(run, 9u);
        run = 1;
    }
}

TEST(Reference, StartsAtRestAndStaysBounded) {
    ReferenceConfig cfg;
    cfg.amplitude = 1.3;
    cfg.duration = 800;
    const auto r = generate_reference(cfg);
    ASSERT_EQ(r.size(), 800u);
    EXPECT_EQ(r[0], 0.0);
    for (double v : r)
        EXPECT_LE(std::abs(v), 1.3);
}

TEST(Plant, ZeroInputStaysAtRest) {
    PlantSpec s;
    s.channels[0].beta = 0.8;
    const auto ds = simulate_plant(s, {std::vector<double>(300, 0.0)}, 5);
    for (double y : ds.y[0])
        EXPECT_EQ(y, 0.0);
    EXPECT_EQ(ds.d.size(), 1u);
}

TEST(Plant, DeadzoneBlocksSmallInputs) {
    PlantSpec s;
    s.channels[0].deadzone = 0.2;
    s.disturbance.noise_std = 0.0;
    std::vector<double> u(100);
    for (std::size_t k = 0; k < u.size(); ++k)
        u[k] = 0.19 * std::sin(0.3 * static_cast<double>(k));
    const auto quiet = simulate_plant(s, {u}, 1);
    for (double y : quiet.y[0])
        EXPECT_EQ(y, 0.0);
    u.assign(100, 0.3);
    EXPECT_GT(simulate_plant(s, {u}, 1).y[0].back(), 0.0);
}

TEST(Plant, NoCouplingToDisturbanceWithoutBeta) {
    const auto u = generate_excitation({-1, 1, 2, 8, 400, 3});
    auto s1 = linear_spec(0.6), s2 = linear_spec(0.6);
    s2.disturbance.amplitude = 5.0;
    s2.disturbance.noise_std = 1.0;
    EXPECT_EQ(simulate_plant(s1, {u}, 2).y, simulate_plant(s2, {u}, 9).y);
    auto s3 = linear_spec(0.6, 0.5);
    s3.disturbance.amplitude = 5.0;
    EXPECT_NE(simulate_plant(s3, {u}, 2).y, simulate_plant(s1, {u}, 2).y);
}

TEST(Plant, FreeResponseDecaysGeometrically) {
    std::vector<double> u(60, 0.0);
    std::fill(u.begin(), u.begin() + 20, 1.0);
    const auto y = simulate_plant(linear_spec(0.7), {u}, 4).y[0];
    for (std::size_t k = 21; k + 1 < y.size(); ++k)
        EXPECT_NEAR(y[k + 1], 0.7 * y[k], 1e-14);
    EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(Plant, SpecValidation) {
    PlantSpec s;
    s.channels[0].a = 1.0;
    EXPECT_THROW(ValvePlant{s}, ShapeError);
    s = PlantSpec{};
    s.coupling = 0.3;
    EXPECT_THROW(ValvePlant{s}, ShapeError);
    EXPECT_THROW((void)simulate_plant(PlantSpec{}, {{1.0}, {1.0}}, 0), ShapeError);
}

TEST(Signals, LowpassStepAndLimits) {
    std::vector<double> step(200, 1.0);
    step[0] = 0.0;
    const auto y = lowpass(step, 20.0);
    EXPECT_NEAR(y[20], 1.0 - std::exp(-1.0), 0.02 * 0.632);
    const auto c = lowpass(std::vector<double>(50, 3.5), 4.0);
    for (double v : c)
        EXPECT_DOUBLE_EQ(v, 3.5);
    EXPECT_THROW((void)lowpass(step, 0.0), ShapeError);
    EXPECT_EQ(decimate(std::vector<double>{0, 1, 2, 3, 4}, 2), (std::vector<double>{0, 2, 4}));
    const auto d = differentiate(std::vector<double>{0, 1, 4, 9}, 0.5);
    EXPECT_DOUBLE_EQ(d[1], 2.0);
    EXPECT_DOUBLE_EQ(d[3], 10.0);
}

TEST(ClosedLoop, LpvPlantIsTrackedExactly) {
    Gen g(51);
    for (int draw = 0; draw < 5; ++draw) {
        const auto m = random_siso(g, false);
        const auto ss = to_lpv_siso(m);
        auto ctrl = synthesize(ss);
        const auto r = smooth_signal(g, 300);
        ctrl.reset(VectorXd::Constant(1, r[0]), VectorXd());
        LpvPlant plant(ss, ctrl.initial_state());
        const auto rep = closed_loop_eval(plant, ctrl, {r}, 0);
        EXPECT_LT(rep.rmse[0], 1e-8);
    }
}

TEST(ClosedLoop, LpvPlantWithConstantDisturbance) {
    Gen g(52);
    const auto m = random_siso(g, true);
    const auto ss = to_lpv_disturbance(m);
    auto ctrl = synthesize(ss);
    const auto r = smooth_signal(g, 300);
    ctrl.reset(VectorXd::Constant(1, r[0]), VectorXd::Constant(1, 0.4));
    LpvPlant plant(ss, ctrl.initial_state(), {std::vector<double>(300, 0.4)});
    EXPECT_LT(closed_loop_eval(plant, ctrl, {r}, 0).rmse[0], 1e-8);
}

TEST(ClosedLoop, TrainedControllersOnValvePlant) {
    const auto cfg = disturbance_config();
    const auto data = training_data(cfg);
    auto blind = synthesize(to_lpv_siso(train_variant(cfg, ControllerVariant::Siso, data).front()));
    auto aware = synthesize(
        to_lpv_disturbance(train_variant(cfg, ControllerVariant::SisoDisturbance, data).front()));
    ValvePlant plant(cfg.plant);
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const auto ref = reference_signals(cfg, seed);
        const auto rb = closed_loop_eval(plant, blind, ref, seed);
        const auto ra = closed_loop_eval(plant, aware, ref, seed);
        EXPECT_TRUE(std::isfinite(rb.rmse[0]));
        EXPECT_LT(rb.rmse[0], rb.reference_rms[0]);
        EXPECT_LE(ra.rmse[0], rb.rmse[0]);
    }
}

TEST(ClosedLoop, ArityMismatch) {
    auto ctrl = synthesize(to_lpv_siso(single_model(DelayConfig::siso({1}, {1}), 0.0, {1.0, 0.5})));
    PlantSpec s;
    s.kind = PlantKind::MimoCoupled;
    s.channels.assign(2, ValveChannel{});
    ValvePlant plant(s);
    EXPECT_THROW((void)closed_loop_eval(plant, ctrl, {std::vector<double>(10)}, 0), ShapeError);
}

// ---------------------------------------------------------------------------
// cli_io: datasets and persistence
// ---------------------------------------------------------------------------

TEST(Dataset, ParsesWellFormedFile) {
    std::istringstream in("t,u1,d1,y1\n0,1,0.5,0\n0.1,2,0.5,1\n0.2,3,0.5,2\n");
    const auto ds = parse_dataset(in);
    EXPECT_EQ(ds.length(), 3u);
    EXPECT_NEAR(ds.sample_period, 0.1, 1e-12);
    EXPECT_EQ(ds.u[0], (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(ds.d.size(), 1u);
}

TEST(Dataset, MissingColumnIsNamed) {
    std::istringstream in("t,u1\n0,1\n1,2\n");
    try {
        (void)parse_dataset(in);
        FAIL() << "expected a schema error";
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find("y1"), std::string::npos);
    }
    std::istringstream in2("t,u1,y1\n0,1,0\n1,2,0\n");
    EXPECT_THROW((void)parse_dataset(in2, {1, 1, 1}), SchemaError);
}

TEST(Dataset, JitterAndNaNRejected) {
    std::istringstream jitter("t,u1,y1\n0,1,0\n1,1,0\n2.05,1,0\n3,1,0\n");
    EXPECT_THROW((void)parse_dataset(jitter), SchemaError);
    std::istringstream nan("t,u1,y1\n0,1,0\n1,nan,0\n2,1,0\n");
    EXPECT_THROW((void)parse_dataset(nan), SchemaError);
    std::istringstream empty("t,u1,y1\n");
    EXPECT_THROW((void)parse_dataset(empty), InsufficientDataError);
}

TEST(Dataset, WriteThenParseRoundTrips) {
    const auto ds = simulate_plant(PlantSpec{}, {generate_excitation({-1, 1, 2, 5, 50, 2})}, 3);
    std::stringstream buf;
    write_dataset(buf, ds);
    const auto back = parse_dataset(buf);
    EXPECT_EQ(back.u, ds.u);
    EXPECT_EQ(back.d, ds.d);
    EXPECT_EQ(back.y, ds.y);
}

TEST(Store, RoundTripIsBitIdentical) {
    Gen g(53);
    ModelStore s;
    s.kind = LpvKind::Mimo;
    s.models = random_mimo(g);
    s.metadata = {{"seed", 53}};
    const auto path = scratch("store") / "model.json";
    save_store(path, s);
    const auto back = load_store(path);
    ASSERT_EQ(back.models.size(), s.models.size());
    EXPECT_EQ(store_to_json(back), store_to_json(s));
    for (int i = 0; i < 1000; ++i) {
        const auto& a = s.models[static_cast<std::size_t>(i) % 2];
        const auto& b = back.models[static_cast<std::size_t>(i) % 2];
        const VectorXd xl = g.vector(static_cast<Eigen::Index>(a.net().lin_dim()), -3, 3);
        const VectorXd xv = g.vector(static_cast<Eigen::Index>(a.net().val_dim()), -3, 3);
        const double pa = evaluate(xl, xv, a.net()), pb = evaluate(xl, xv, b.net());
        ASSERT_EQ(std::memcmp(&pa, &pb, sizeof pa), 0);
    }
}

TEST(Store, RejectsUnknownVersionAndKind) {
    json j = store_to_json({LpvKind::Siso, {single_model(DelayConfig::siso({1}, {1}), 0.0, {1.0, 0.5})}, {}, {}});
    EXPECT_NO_THROW((void)store_from_json(j));
    j["schema_version"] = 2;
    EXPECT_THROW((void)store_from_json(j), SchemaError);
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "mystery";
    EXPECT_THROW((void)store_from_json(j), SchemaError);
    j.erase("schema_version");
    EXPECT_THROW((void)store_from_json(j), SchemaError);
}

TEST(Config, JsonRoundTrip) {
    for (const char* name : {"identity_smoke.json", "siso_disturbance.json", "mimo.json"}) {
        const auto c = load_config(fs::path(LMNFF_CONFIG_DIR) / name);
        EXPECT_EQ(to_json(config_from_json(to_json(c))), to_json(c)) << name;
    }
    EXPECT_THROW((void)config_from_json({{"variants", {"fancy"}}}), SchemaError);
    EXPECT_THROW((void)config_from_json({{"plant", {{"kind", "rocket"}}}}), SchemaError);
}

// ---------------------------------------------------------------------------
// experiment pipeline
// ---------------------------------------------------------------------------

TEST(Experiment, IdentityPlantTracksExactly) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = run_experiment(smoke_config(), scratch("run"));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto& m = rep.metrics["variants"]["siso"];
    EXPECT_LT(m["tracking_rmse_mean"][0].get<double>(), 1e-6);
    EXPECT_LT(m["prediction_rmse"][0].get<double>(), 1e-6);
    EXPECT_EQ(m["certification"], "certified");
    EXPECT_LT(secs, 10.0);
    for (const char* f : {"metrics.json", "config.json", "train.csv", "model_siso.json", "certificate_siso.json",
                          "traces_siso.csv"})
        EXPECT_TRUE(fs::exists(rep.directory / f)) << f;
}

TEST(Experiment, RunsAreDeterministicAndEmbedConfig) {
    const auto cfg = disturbance_config();
    const auto a = run_experiment(cfg, scratch("a"));
    const auto b = run_experiment(cfg, scratch("b"));
    EXPECT_EQ(slurp(a.directory / "metrics.json"), slurp(b.directory / "metrics.json"));
    EXPECT_EQ(slurp(a.directory / "model_siso_disturbance.json"), slurp(b.directory / "model_siso_disturbance.json"));
    EXPECT_EQ(a.metrics["config"], to_json(cfg));
    EXPECT_EQ(a.metrics["config_hash"], content_hash(to_json(cfg)));
}

TEST(Experiment, RepeatedSeedsReportSpread) {
    auto cfg = disturbance_config();
    cfg.variants = {ControllerVariant::SisoDisturbance};
    cfg.eval_seeds = {31, 32, 33, 34, 35, 36};
    const auto rep = run_experiment(cfg, scratch("run"));
    const auto& m = rep.metrics["variants"]["siso_disturbance"];
    ASSERT_EQ(m["tracking_rmse_runs"].size(), 6u);
    std::vector<double> runs;
    for (const auto& r : m["tracking_rmse_runs"])
        runs.push_back(r[0].get<double>());
    double mean = 0.0;
    for (double v : runs)
        mean += v / 6.0;
    double var = 0.0;
    for (double v : runs)
        var += (v - mean) * (v - mean) / 5.0;
    EXPECT_NEAR(m["tracking_rmse_mean"][0].get<double>(), mean, 1e-12);
    EXPECT_NEAR(m["tracking_rmse_std"][0].get<double>(), std::sqrt(var), 1e-12);
    EXPECT_GT(std::sqrt(var), 0.0);
}

TEST(Experiment, UncertifiableModelStillReportsMetrics) {
    auto cfg = smoke_config();
    cfg.delays.input = {2};
    cfg.lolimot.max_models = 3;
    cfg.lolimot.ridge = 1e-8;
    const auto rep = run_experiment(cfg, scratch("run"));
    const auto& m = rep.metrics["variants"]["siso"];
    ASSERT_GT(m["local_models"][0].get<int>(), 1);
    EXPECT_EQ(m["certification"], "not certified");
    EXPECT_EQ(m["prediction_rmse"].size(), 1u);
    EXPECT_EQ(m["tracking_rmse_mean"].size(), 1u);
    EXPECT_FALSE(m.contains("failure"));
}

TEST(Experiment, StageFailureIsRecorded) {
    auto cfg = smoke_config();
    cfg.variants = {ControllerVariant::Mimo};
    const auto rep = run_experiment(cfg, scratch("run"));
    const auto& m = rep.metrics["variants"]["mimo"];
    ASSERT_TRUE(m.contains("failure"));
    EXPECT_EQ(m["failure"]["stage"], "train");
    EXPECT_TRUE(fs::exists(rep.directory / "metrics.json"));
}

// ---------------------------------------------------------------------------
// command line
// ---------------------------------------------------------------------------

TEST(Cli, CertifyCounterexample) {
    const auto dir = scratch("cli");
    const auto r = cli("certify --model \"" LMNFF_CONFIG_DIR "/counterexample_model.json\" --out \"" +
                           (dir / "out").string() + "\"",
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(r.out);
    EXPECT_EQ(j["verdict"], "infeasible");
    ASSERT_EQ(j["poles"].size(), 2u);
    std::vector<double> re{j["poles"][0]["re"].get<double>(), j["poles"][1]["re"].get<double>()};
    std::sort(re.begin(), re.end());
    EXPECT_NEAR(re[0], -1.5, 1e-9);
    EXPECT_NEAR(re[1], 0.0, 1e-9);
    EXPECT_TRUE(fs::exists(dir / "out" / "certificate.json"));
}

TEST(Cli, TrainTwiceGivesSameHash) {
    const auto dir = scratch("cli");
    const std::string base = "train --config \"" LMNFF_CONFIG_DIR "/siso_disturbance.json\" --seed 4 "
                             "--variant siso_disturbance --out ";
    const auto a = cli(base + "\"" + (dir / "a").string() + "\"", dir);
    ASSERT_EQ(a.code, 0) << a.err;
    const auto b = cli(base + "\"" + (dir / "b").string() + "\"", dir);
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(json::parse(a.out)["model_hash"], json::parse(b.out)["model_hash"]);
    EXPECT_EQ(slurp(dir / "a" / "model.json"), slurp(dir / "b" / "model.json"));
}

TEST(Cli, EvalArityMismatch) {
    const auto dir = scratch("cli");
    std::ofstream(dir / "two.csv") << "t,u1,u2,y1,y2\n0,0,0,0,0\n1,1,1,1,1\n2,0,0,0,0\n";
    const auto r = cli("eval --model \"" LMNFF_CONFIG_DIR "/counterexample_model.json\" --data \"" +
                           (dir / "two.csv").string() + "\" --out \"" + (dir / "out").string() + "\"",
                       dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("arity"), std::string::npos) << r.err;
}

TEST(Cli, ExitCodesAndUsage) {
    const auto dir = scratch("cli");
    const auto usage = cli("train --bogus-flag 3", dir);
    EXPECT_EQ(usage.code, 1);
    EXPECT_NE((usage.out + usage.err).find("--bogus-flag"), std::string::npos);

    const auto missing = cli("synthesize --model \"" + (dir / "nope.json").string() + "\"", dir);
    EXPECT_EQ(missing.code, 1);

    // a constant excitation leaves the input column without information
    json cfg = to_json(smoke_config());
    cfg["excitation"]["amplitude_min"] = 0.0;
    cfg["excitation"]["amplitude_max"] = 0.0;
    std::ofstream(dir / "flat.json") << cfg.dump();
    const auto runtime = cli("train --config \"" + (dir / "flat.json").string() + "\" --out \"" +
                                 (dir / "out").string() + "\"",
                             dir);
    EXPECT_EQ(runtime.code, 2) << runtime.err;

    const auto ok = cli("simulate --config \"" LMNFF_CONFIG_DIR "/identity_smoke.json\" --format csv --out \"" +
                            (dir / "sim").string() + "\"",
                        dir);
    EXPECT_EQ(ok.code, 0) << ok.err;
    EXPECT_EQ(ok.out.rfind("key,value", 0), 0u);
    EXPECT_EQ(load_dataset(dir / "sim" / "data.csv").length(), 300u);
}

TEST(Cli, PipelineCommandsChain) {
    const auto dir = scratch("cli");
    const std::string cfg = "\"" LMNFF_CONFIG_DIR "/identity_smoke.json\"";
    ASSERT_EQ(cli("train --config " + cfg + " --out \"" + (dir / "m").string() + "\"", dir).code, 0);
    const std::string model = "\"" + (dir / "m" / "model.json").string() + "\"";
    ASSERT_EQ(cli("simulate --config " + cfg + " --out \"" + (dir / "s").string() + "\"", dir).code, 0);
    const auto pred = cli("predict --model " + model + " --data \"" + (dir / "s" / "data.csv").string() +
                              "\" --out \"" + (dir / "p").string() + "\"",
                          dir);
    ASSERT_EQ(pred.code, 0) << pred.err;
    EXPECT_LT(json::parse(pred.out)["prediction_rmse"][0].get<double>(), 1e-6);
    const auto syn = cli("synthesize --model " + model + " --out \"" + (dir / "c").string() + "\"", dir);
    ASSERT_EQ(syn.code, 0) << syn.err;
    EXPECT_EQ(json::parse(syn.out)["relative_degree"], 1);
    const auto ev = cli("eval --config " + cfg + " --model " + model + " --out \"" + (dir / "e").string() + "\"", dir);
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_LT(json::parse(ev.out)["tracking_rmse"][0].get<double>(), 1e-6);
    EXPECT_TRUE(fs::exists(dir / "e" / "traces.csv"));
    const auto rep = cli("report --config " + cfg + " --out \"" + (dir / "r").string() + "\"", dir);
    ASSERT_EQ(rep.code, 0) << rep.err;
    EXPECT_TRUE(fs::exists(dir / "r" / "metrics.json"));
}
