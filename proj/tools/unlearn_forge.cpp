// unlearn-forge: desk-scale machine-unlearning laboratory for DDPMs.
//
// Verbs:
//   train-base  train the conditional base diffusion model
//   unlearn     run the configured unlearning method from a base checkpoint
//   eval        sample a checkpoint and compute the metric report
//   report      aggregate completed runs into a comparison table + plots
//
// Exit codes: 0 success, 1 usage/config error, 2 missing prerequisite,
// 3 numeric divergence.

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unlearn/harness.hpp"

namespace {

unsigned thread_cap() {
    const char* env = std::getenv("UNLEARN_FORGE_THREADS");
    if (env == nullptr) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<unsigned>(v) : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unlearn-forge: machine-unlearning laboratory for diffusion models"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false, out_set = false;
    std::vector<std::string> run_dirs;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "TOML config path");
        sub->add_option("--seed", seed, "root RNG seed (overrides config)")
            ->each([&](const std::string&) { seed_set = true; });
        sub->add_option("--out", out_dir, "output directory (overrides config)")
            ->each([&](const std::string&) { out_set = true; });
    };

    CLI::App* train = app.add_subcommand("train-base", "train the base diffusion model");
    add_common(train);
    CLI::App* unlearn_cmd = app.add_subcommand("unlearn", "run the configured unlearning method");
    add_common(unlearn_cmd);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    CLI::App* report = app.add_subcommand("report", "aggregate completed runs");
    add_common(report);
    report->add_option("dirs", run_dirs, "completed run directories");

    CLI11_PARSE(app, argc, argv);

    try {
        std::string text;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw unlearn::PrerequisiteError("cannot open config: " + config_path);
            std::ostringstream ss;
            ss << in.rdbuf();
            text = ss.str();
        }
        unlearn::RunConfig cfg = unlearn::parse_config(text);
        if (seed_set) cfg.seed = seed;
        if (out_set) cfg.out = out_dir;
        const std::string verb = app.get_subcommands().front()->get_name();
        return unlearn::run_command(verb, cfg, run_dirs, thread_cap());
    } catch (const unlearn::PrerequisiteError& e) {
        std::fprintf(stderr, "error (missing prerequisite): %s\n", e.what());
        return 2;
    } catch (const unlearn::ConfigError& e) {
        std::fprintf(stderr, "error (config): %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
