// orthosis: headless front end for simulation, training, calibration,
// closed-loop runs, evaluation, replay and the session service.
//
// Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "orthosis/calibration.hpp"
#include "orthosis/control.hpp"
#include "orthosis/eval.hpp"
#include "orthosis/forest.hpp"
#include "orthosis/io.hpp"
#include "orthosis/service.hpp"
#include "orthosis/simgen.hpp"
#include "orthosis/transport.hpp"

namespace fs = std::filesystem;
using namespace orthosis;

namespace {

struct Options {
    Settings settings;
    std::string profile = "B-like";
    std::string script;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string calib;
    std::string model;
    std::string host = "127.0.0.1";
    std::uint16_t port = 7878;
    std::string kind = "training";
    std::vector<std::string> logs;
    std::string truth;
    std::string condition;
    std::string control;
    int trees = 100;
    int threads = 0;
    std::optional<std::size_t> focus_digit;
    bool max_speed = false;
    bool fast = false;
};

// Relative names are looked up in $ORTHOSIS_CONFIG_DIR first.
std::optional<fs::path> find_config(const std::string& name) {
    std::vector<fs::path> candidates;
    if (const char* dir = std::getenv("ORTHOSIS_CONFIG_DIR"); dir && *dir && fs::path(name).is_relative()) {
        candidates.push_back(fs::path(dir) / name);
        candidates.push_back(fs::path(dir) / (name + ".json"));
    }
    candidates.push_back(name);
    for (const auto& p : candidates) {
        if (fs::is_regular_file(p)) return p;
    }
    return std::nullopt;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, p.string() + ": " + e.what());
    }
}

sim::SubjectProfile load_profile(const Options& o) {
    sim::SubjectProfile p;
    const auto presets = sim::profile_presets();
    if (auto it = presets.find(o.profile); it != presets.end()) {
        p = it->second;
    } else if (auto path = find_config(o.profile)) {
        const auto j = read_json(*path);
        // A config file may extend a preset: {"preset": "B-like", ...}.
        sim::SubjectProfile base;
        if (j.contains("preset")) base = sim::preset(j.at("preset").get<std::string>());
        p = sim::profile_from_json(j, base);
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown profile '" + o.profile + "' (not a preset or a file)");
    }
    if (o.seed) p.seed = *o.seed;
    return p;
}

sim::Script load_script(const Options& o) {
    if (o.script.empty()) return sim::default_test_script();
    const auto path = find_config(o.script);
    if (!path) throw Error(ErrorCode::InvalidScript, "script '" + o.script + "' not found");
    return sim::script_from_json(read_json(*path));
}

ControlMode resolve_mode(const Options& o, const sim::SubjectProfile& profile) {
    if (o.mode.empty()) return sim::matched_mode(profile);
    const auto m = parse_mode(o.mode);
    if (!m) throw Error(ErrorCode::InvalidArgument, "unknown mode '" + o.mode + "'");
    return *m;
}

CalibrationResult load_calibration(const Options& o) {
    auto c = io::read_calibration(o.calib);
    // A class threshold given on the command line overrides the file.
    if (o.settings.class_threshold != Settings{}.class_threshold) {
        c.class_thresholds = {o.settings.class_threshold, o.settings.class_threshold, o.settings.class_threshold};
    }
    validate_calibration(c);
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::fputs(text.c_str(), stdout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
    out << text;
}

int cmd_simulate(const Options& o) {
    const auto profile = load_profile(o);
    SessionLog log;
    if (o.kind == "training") {
        sim::TrainingConfig tc;
        tc.settings = o.settings;
        log = sim::generate_training_session(profile, tc);
    } else {
        sim::TestConfig tc;
        tc.settings = o.settings;
        log = sim::generate_test_session(profile, load_script(o), nullptr, tc).log;
    }
    io::write_log(log, o.out);
    std::fprintf(stderr, "wrote %zu frames (%s, %s) to %s\n", log.size(), o.kind.c_str(), profile.name.c_str(),
                 o.out.c_str());
    return 0;
}

int cmd_train(const Options& o) {
    const auto log = io::read_log(o.logs.front());
    ForestParams fp;
    fp.n_trees = o.trees;
    fp.threads = o.threads;
    if (o.seed) fp.seed = *o.seed;
    const auto forest = train_forest(training_samples(log), fp);
    io::write_forest(forest, o.model);
    std::fprintf(stderr, "trained %zu trees on %zu samples%s\n", forest.trees().size(), log.size(),
                 forest.degenerate() ? " (degenerate: constant features)" : "");
    return 0;
}

int cmd_calibrate(const Options& o) {
    const auto log = io::read_log(o.logs.front());
    calibration::Options co;
    co.mean_window_s = o.settings.mean_window_s;
    const auto outcome = calibration::calibrate(log, co, o.focus_digit, o.settings.class_threshold);
    if (!outcome.bend_error.empty()) std::fprintf(stderr, "warning: %s\n", outcome.bend_error.c_str());
    if (!outcome.pressure_error.empty()) std::fprintf(stderr, "warning: %s\n", outcome.pressure_error.c_str());
    if (o.out.empty() || o.out == "-") {
        io::write_calibration(outcome.result, std::cout);
    } else {
        io::write_calibration(outcome.result, o.out);
    }
    return 0;
}

int cmd_run(const Options& o) {
    const auto profile = load_profile(o);
    const auto forest = io::read_forest(o.model);
    const auto calib = load_calibration(o);
    const auto mode = resolve_mode(o, profile);
    Controller controller(mode, forest, calib, o.settings);
    sim::TestConfig tc;
    tc.settings = o.settings;
    auto run = sim::generate_test_session(profile, load_script(o), &controller, tc);
    io::write_log(run.log, o.out);
    std::fprintf(stderr, "ran %s on %s: %zu frames to %s\n", std::string(to_string(mode)).c_str(),
                 profile.name.c_str(), run.log.size(), o.out.c_str());
    return 0;
}

std::string default_condition(const SessionLog& log) {
    for (auto a : log.arm_position) {
        if (a == ArmPosition::Supported) return "Arm Support";
    }
    return "Regular";
}

int cmd_eval(const Options& o) {
    std::vector<eval::EvalReport> rows;
    std::string condition = o.condition;
    for (const auto& path : o.logs) {
        const auto log = io::read_log(path);
        if (!log.has_predictions()) {
            throw Error(ErrorCode::InvalidArgument, path + " has no controller predictions to score");
        }
        eval::EvalReport r;
        if (o.truth.empty()) {
            r = eval::evaluate_log(log, o.settings.match_window_s);
        } else {
            const auto gt = io::read_log(o.truth);
            r = eval::evaluate(log.predicted_commands(), gt.gt_command, log.times(), o.settings.match_window_s);
        }
        if (condition.empty()) condition = default_condition(log);
        rows.push_back(r);
    }
    auto row = rows.size() == 1 ? rows.front() : eval::average(rows);
    row.condition = condition;
    row.control = o.control.empty() ? "EMG" : o.control;
    std::fputs(eval::render_table({row}).c_str(), stdout);
    if (!o.out.empty()) write_text(o.out, eval::to_json(std::vector<eval::EvalReport>{row}).dump(2) + "\n");
    return 0;
}

int cmd_replay(const Options& o) {
    auto log = io::read_log(o.logs.front());
    std::unique_ptr<Forest> forest;
    std::unique_ptr<Controller> controller;
    if (!o.model.empty()) {
        forest = std::make_unique<Forest>(io::read_forest(o.model));
        const auto calib = load_calibration(o);
        const auto mode = o.mode.empty() ? ControlMode::EmgOnly : resolve_mode(o, sim::SubjectProfile{});
        controller = std::make_unique<Controller>(mode, *forest, calib, o.settings);
        std::fprintf(stderr,
                     "warning: replay is open loop; recorded motor positions come from the original session, "
                     "use `run` for closed-loop control\n");
        log.pred_intent.clear();
        log.pred_command.clear();
    }
    const bool to_stdout = o.out.empty();
    io::replay(log, o.max_speed ? io::Pace::MaxSpeed : io::Pace::Realtime,
               [&](std::size_t i, const SensorFrame& f) {
                   nlohmann::json j = {{"t", f.t},
                                       {"emg", f.emg},
                                       {"bend", f.bend},
                                       {"pressure", f.pressure[0]},
                                       {"motor_pos", f.motor_pos},
                                       {"phase", std::string(to_string(log.phase[i]))}};
                   if (controller) {
                       const auto out = controller->step(f);
                       log.pred_intent.emplace_back(out.intent);
                       log.pred_command.emplace_back(out.command);
                       j["intent"] = std::string(to_string(out.intent));
                       j["command"] = std::string(to_string(out.command));
                   }
                   if (to_stdout) {
                       std::fputs((j.dump() + "\n").c_str(), stdout);
                       std::fflush(stdout);
                   }
               });
    if (!to_stdout) io::write_log(log, o.out);
    return 0;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const Options& o) {
    service::EngineConfig cfg;
    cfg.settings = o.settings;
    cfg.profile = load_profile(o);
    cfg.script = load_script(o);
    cfg.forest.n_trees = o.trees;
    cfg.forest.threads = o.threads;
    if (o.seed) cfg.seed = *o.seed;
    service::TcpServer* server = nullptr;
    service::SessionEngine engine(cfg, [&server](const service::Outbound& out) {
        if (server) server->deliver(out);
    });
    if (!o.model.empty()) engine.load(io::read_forest(o.model), load_calibration(o));
    service::TcpServer tcp(engine, o.host, o.port);
    server = &tcp;
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    std::fprintf(stderr, "listening on %s:%u\n", o.host.c_str(), static_cast<unsigned>(tcp.port()));
    engine.run(g_stop, !o.fast);
    tcp.stop();
    return 0;
}

void add_settings(CLI::App* sub, Options& o) {
    sub->add_option("--rate-hz", o.settings.rate_hz, "Sample rate")->check(CLI::PositiveNumber);
    sub->add_option("--mean-window", o.settings.mean_window_s, "Bend/pressure smoothing window, s")
        ->check(CLI::PositiveNumber);
    sub->add_option("--median-window", o.settings.median_window_s, "Probability median window, s")
        ->check(CLI::PositiveNumber);
    sub->add_option("--transition-time", o.settings.transition_time_s, "Full motor stroke, s")
        ->check(CLI::PositiveNumber);
    sub->add_option("--match-window", o.settings.match_window_s, "Transition matching tolerance, s")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--threshold", o.settings.class_threshold, "Class probability threshold")
        ->check(CLI::Range(0.5, 1.0));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intent inference and control for a simulated tendon-driven hand orthosis", "orthosis"};
    app.require_subcommand(1);
    Options o;

    auto* simulate = app.add_subcommand("simulate", "Generate a session log from a subject profile");
    simulate->add_option("--profile", o.profile, "Preset name or profile JSON");
    simulate->add_option("--kind", o.kind, "training or test")->check(CLI::IsMember({"training", "test"}));
    simulate->add_option("--script", o.script, "Test script JSON (test kind)");
    simulate->add_option("--seed", o.seed, "Overrides the profile seed");
    simulate->add_option("--out", o.out, "Output log (.csv or .jsonl)")->required();
    add_settings(simulate, o);

    auto* train = app.add_subcommand("train", "Fit the intent forest on a training log");
    train->add_option("log", o.logs, "Training log")->required()->expected(1)->check(CLI::ExistingFile);
    train->add_option("--model", o.model, "Output forest")->required();
    train->add_option("--trees", o.trees, "Number of trees")->check(CLI::PositiveNumber);
    train->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", o.seed, "Forest seed");

    auto* calibrate = app.add_subcommand("calibrate", "Derive trigger thresholds from a training log");
    calibrate->add_option("log", o.logs, "Training log")->required()->expected(1)->check(CLI::ExistingFile);
    calibrate->add_option("--out", o.out, "Output calibration file (default stdout)");
    calibrate->add_option("--focus-digit", o.focus_digit, "Force the bend channel used for L_B")
        ->check(CLI::Range(0, static_cast<int>(kBendChannels) - 1));
    add_settings(calibrate, o);

    auto* run = app.add_subcommand("run", "Closed-loop test session with a trained controller");
    run->add_option("--profile", o.profile, "Preset name or profile JSON");
    run->add_option("--script", o.script, "Test script JSON");
    run->add_option("--mode", o.mode, "emg | bend-open | pressure-close (default: matched to profile)");
    run->add_option("--seed", o.seed, "Overrides the profile seed");
    run->add_option("--model", o.model, "Trained forest")->required()->check(CLI::ExistingFile);
    run->add_option("--calib", o.calib, "Calibration file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", o.out, "Output log (.csv or .jsonl)")->required();
    add_settings(run, o);

    auto* ev = app.add_subcommand("eval", "Score controller logs against ground truth");
    ev->add_option("logs", o.logs, "Logs with predictions; several are averaged into one row")
        ->required()
        ->check(CLI::ExistingFile);
    ev->add_option("--truth", o.truth, "Take ground truth from this log instead")->check(CLI::ExistingFile);
    ev->add_option("--condition", o.condition, "Condition label (default from arm position)");
    ev->add_option("--control", o.control, "Control type label (default EMG)");
    ev->add_option("--out", o.out, "Also write the report as JSON");
    add_settings(ev, o);

    auto* replay = app.add_subcommand("replay", "Play back a recorded log, optionally through a controller");
    replay->add_option("log", o.logs, "Session log")->required()->expected(1)->check(CLI::ExistingFile);
    replay->add_flag("--max-speed", o.max_speed, "Do not pace frames in real time");
    auto* rmodel = replay->add_option("--model", o.model, "Forest for open-loop annotation")->check(CLI::ExistingFile);
    auto* rcalib = replay->add_option("--calib", o.calib, "Calibration file")->check(CLI::ExistingFile);
    rmodel->needs(rcalib);
    rcalib->needs(rmodel);
    replay->add_option("--mode", o.mode, "Control mode for annotation (default emg)")->needs(rmodel);
    replay->add_option("--out", o.out, "Write the (annotated) log here instead of streaming JSON lines");
    add_settings(replay, o);

    auto* serve = app.add_subcommand("serve", "Start the session service (newline-delimited JSON over TCP)");
    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "TCP port (0 picks a free one)");
    serve->add_option("--profile", o.profile, "Simulated subject");
    serve->add_option("--script", o.script, "Default test script");
    serve->add_option("--seed", o.seed, "Session seed");
    serve->add_option("--trees", o.trees, "Trees for in-session training")->check(CLI::PositiveNumber);
    serve->add_option("--threads", o.threads, "Training threads (0 = all cores)");
    auto* smodel = serve->add_option("--model", o.model, "Preload a forest")->check(CLI::ExistingFile);
    auto* scalib = serve->add_option("--calib", o.calib, "Preload a calibration")->check(CLI::ExistingFile);
    smodel->needs(scalib);
    scalib->needs(smodel);
    serve->add_flag("--fast", o.fast, "Tick as fast as possible instead of in real time");
    add_settings(serve, o);

    if (argc <= 1) {
        std::fputs(app.help().c_str(), stderr);
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*simulate) return cmd_simulate(o);
        if (*train) return cmd_train(o);
        if (*calibrate) return cmd_calibrate(o);
        if (*run) return cmd_run(o);
        if (*ev) return cmd_eval(o);
        if (*replay) return cmd_replay(o);
        if (*serve) return cmd_serve(o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
