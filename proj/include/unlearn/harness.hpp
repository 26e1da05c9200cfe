#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/adaptive.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/config.hpp"
#include "unlearn/csv.hpp"
#include "unlearn/data.hpp"
#include "unlearn/diffusion.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/rl.hpp"
#include "unlearn/sfd.hpp"
#include "unlearn/siss.hpp"
#include "unlearn/svg.hpp"
#include "unlearn/toml.hpp"

namespace unlearn {

using ojson = nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

// Missing input artifact (e.g. a base checkpoint) -> exit code 2.
struct PrerequisiteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss mid-run -> exit code 3, step recorded.
struct DivergenceError : std::runtime_error {
    long step;
    DivergenceError(long step_, const std::string& what_)
        : std::runtime_error(what_ + " at step " + std::to_string(step_)), step(step_) {}
};

// -- dataset assembly ----------------------------------------------------------

struct DataBundle {
    LabeledDataset ds;
    GaussMixtureSpec spec;  // empty per_class for idx data (no oracle)
    ForgetSplit split;
    bool has_oracle = false;
};

inline DataBundle make_dataset(const RunConfig& cfg) {
    DataBundle b;
    if (cfg.dataset.kind == "contam2d") {
        auto [ds, spec] = gen_contam2d(hash_stream(cfg.seed, "data"),
                                       static_cast<std::size_t>(cfg.dataset.per_class),
                                       cfg.dataset.ratio);
        b.ds = std::move(ds);
        b.spec = std::move(spec);
        b.has_oracle = true;
    } else {
        if (cfg.dataset.image_path.empty() || cfg.dataset.label_path.empty()) {
            throw PrerequisiteError("idx dataset requires dataset.image_path and label_path");
        }
        const int forget_class = cfg.dataset.forget_class;
        b.ds = load_idx(cfg.dataset.image_path, cfg.dataset.label_path,
                        static_cast<std::size_t>(cfg.dataset.side),
                        [forget_class](int label) { return label == forget_class; });
    }
    b.split = split_forget_retain(b.ds);
    return b;
}

inline NoiseSchedule make_schedule(const RunConfig& cfg) {
    return build_schedule(static_cast<int>(cfg.schedule.T), cfg.schedule.beta_start,
                          cfg.schedule.beta_end);
}

inline SissWeights make_weights(const RunConfig& cfg, const ForgetSplit& split) {
    SissWeights w;
    w.n = split.n;
    w.k = split.k;
    w.s = cfg.unlearn.s;
    w.mode = cfg.unlearn.forget_weight_mode == "alg1" ? ForgetWeightMode::Alg1
                                                      : ForgetWeightMode::Eq8;
    return w;
}

// -- config snapshot / manifest ---------------------------------------------------

inline ojson config_to_json(const RunConfig& c) {
    ojson j;
    j["method"] = method_name(c.method);
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"per_class", c.dataset.per_class},
                    {"ratio", c.dataset.ratio},
                    {"forget_class", c.dataset.forget_class},
                    {"image_path", c.dataset.image_path},
                    {"label_path", c.dataset.label_path},
                    {"side", c.dataset.side}};
    j["schedule"] = {{"T", c.schedule.T},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end}};
    j["train"] = {{"steps", c.train.steps},
                  {"batch", c.train.batch},
                  {"lr", c.train.lr},
                  {"conditional", c.train.conditional}};
    j["unlearn"] = {{"base_checkpoint", c.unlearn.base_checkpoint},
                    {"steps", c.unlearn.steps},
                    {"lambda", c.unlearn.lambda},
                    {"s", c.unlearn.s},
                    {"lr", c.unlearn.lr},
                    {"pairs", c.unlearn.pairs},
                    {"clip", c.unlearn.clip},
                    {"clip_factor", c.unlearn.clip_factor},
                    {"forget_weight_mode", c.unlearn.forget_weight_mode}};
    j["adaptive"] = {{"beta", c.adaptive.beta}, {"lr_phi", c.adaptive.lr_phi}};
    j["rl"] = {{"horizon", c.rl.horizon},
               {"episodes", c.rl.episodes},
               {"iterations", c.rl.iterations},
               {"gamma", c.rl.gamma},
               {"gae_lambda", c.rl.gae_lambda},
               {"clip_eps", c.rl.clip_eps},
               {"entropy_coef", c.rl.entropy_coef},
               {"kl_coef", c.rl.kl_coef},
               {"lr", c.rl.lr},
               {"alpha_smooth", c.rl.alpha_smooth},
               {"lambda_min", c.rl.lambda_min},
               {"lambda_max", c.rl.lambda_max},
               {"total_steps", c.rl.total_steps},
               {"update_every", c.rl.update_every},
               {"window", c.rl.window},
               {"grad_norm_features", c.rl.grad_norm_features},
               {"ppo_epochs", c.rl.ppo_epochs},
               {"minibatch", c.rl.minibatch}};
    j["sac"] = {{"tau", c.sac.tau},
                {"alpha_ent", c.sac.alpha_ent},
                {"buffer", c.sac.buffer},
                {"batch", c.sac.batch},
                {"total_steps", c.sac.total_steps},
                {"warmup", c.sac.warmup},
                {"lr", c.sac.lr}};
    j["sfd"] = {{"alpha", c.sfd.alpha},
                {"lambda_sfd", c.sfd.lambda_sfd},
                {"rounds", c.sfd.rounds},
                {"batch", c.sfd.batch},
                {"lr_gen", c.sfd.lr_gen},
                {"lr_fake", c.sfd.lr_fake},
                {"forget_class", c.sfd.forget_class},
                {"override_class", c.sfd.override_class}};
    j["eval"] = {{"checkpoint", c.eval.checkpoint}, {"samples", c.eval.samples}};
    return j;
}

inline std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

class Manifest {
public:
    Manifest(const std::string& dir, const RunConfig& cfg, const std::string& verb)
        : dir_(dir) {
        j_["verb"] = verb;
        j_["code_version"] = kVersion;
        j_["started"] = timestamp_now();
        j_["config"] = config_to_json(cfg);
        j_["files"] = ojson::array();
    }

    void add_file(const std::string& name) { j_["files"].push_back(name); }

    void finalize() {
        j_["finished"] = timestamp_now();
        for (const auto& f : j_["files"]) {
            const auto path = std::filesystem::path(dir_) / f.get<std::string>();
            if (!std::filesystem::exists(path)) {
                throw ContractViolation("manifest: listed file missing: " + path.string());
            }
        }
        std::ofstream out(std::filesystem::path(dir_) / "manifest.json", std::ios::binary);
        out << j_.dump(2) << '\n';
    }

private:
    std::string dir_;
    ojson j_;
};

// -- evaluation -------------------------------------------------------------------

inline ojson report_to_json(const MetricReport& r) {
    ojson j;
    j["seed"] = r.seed;
    j["samples_per_condition"] =
        r.conditions.empty() ? 0 : r.conditions.begin()->second.sample_count;
    ojson conds;
    for (const auto& [name, cell] : r.conditions) {
        ojson c;
        c["frechet"] = cell.frechet;
        c["kid"] = cell.kid;
        if (cell.forget_rate) c["forget_rate"] = *cell.forget_rate;
        if (cell.ssim) c["ssim"] = *cell.ssim;
        c["sample_count"] = cell.sample_count;
        conds[name] = c;
    }
    j["conditions"] = conds;
    return j;
}

// Per-class generated-vs-held-out metrics; the forget class additionally
// reports the Bayes-oracle forget rate.
inline MetricReport evaluate_samples(
    const std::map<int, SampleSet>& generated_by_class, const GaussMixtureSpec& spec,
    int forget_class, std::uint64_t seed) {
    MetricReport report;
    report.seed = seed;
    for (const auto& [cls, gen] : generated_by_class) {
        Rng ref_rng(hash_stream(seed, "eval.ref." + std::to_string(cls)));
        SampleSet ref = sample_from_spec(spec, cls, gen.size(), ref_rng);
        MetricCell cell;
        cell.frechet = frechet(gen, ref);
        cell.kid = kid_mmd(gen, ref);
        cell.sample_count = gen.size();
        if (cls == forget_class &&
            spec.per_class.at(static_cast<std::size_t>(cls)).size() >= 2) {
            cell.forget_rate = forget_rate(gen, spec, cls);
        }
        report.conditions["class_" + std::to_string(cls)] = cell;
    }
    return report;
}

inline MetricReport evaluate_denoiser(const Denoiser& den, const NoiseSchedule& sched,
                                      const GaussMixtureSpec& spec, int forget_class,
                                      std::size_t samples, std::uint64_t seed,
                                      unsigned threads = 1) {
    std::map<int, SampleSet> by_class;
    for (std::size_t c = 0; c < spec.per_class.size(); ++c) {
        by_class[static_cast<int>(c)] = ancestral_sample(
            den, sched, samples, static_cast<int>(c),
            hash_stream(seed, "eval.gen." + std::to_string(c)), threads);
    }
    return evaluate_samples(by_class, spec, forget_class, seed);
}

inline MetricReport evaluate_generator(const Generator& gen, const GaussMixtureSpec& spec,
                                       int forget_class, std::size_t samples,
                                       std::uint64_t seed) {
    std::map<int, SampleSet> by_class;
    for (std::size_t c = 0; c < spec.per_class.size(); ++c) {
        Rng rng(hash_stream(seed, "eval.gen." + std::to_string(c)));
        std::vector<int> labels(samples, static_cast<int>(c));
        Tensor x = generator_forward(gen, samples, labels, rng);
        SampleSet set(samples, std::vector<double>(gen.d));
        for (std::size_t i = 0; i < samples; ++i)
            for (std::size_t j = 0; j < gen.d; ++j) set[i][j] = x.at(i, j);
        by_class[static_cast<int>(c)] = std::move(set);
    }
    return evaluate_samples(by_class, spec, forget_class, seed);
}

inline void write_samples_artifacts(const std::string& dir,
                                    const std::map<int, SampleSet>& by_class,
                                    Manifest& manifest) {
    if (by_class.empty() || by_class.begin()->second.empty()) return;
    const std::size_t d = by_class.begin()->second[0].size();
    std::vector<std::string> cols = {"class"};
    for (std::size_t j = 0; j < d; ++j) cols.push_back("x" + std::to_string(j));
    CsvWriter csv((std::filesystem::path(dir) / "samples.csv").string(), cols);
    for (const auto& [cls, set] : by_class) {
        for (const auto& x : set) {
            std::vector<double> row = {double(cls)};
            row.insert(row.end(), x.begin(), x.end());
            csv.row(row);
        }
    }
    manifest.add_file("samples.csv");
    if (d == 2) {
        static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                        "#ff7f0e", "#8c564b"};
        std::vector<ScatterSeries> series;
        for (const auto& [cls, set] : by_class) {
            ScatterSeries s;
            s.label = "class " + std::to_string(cls);
            s.color = kColors[static_cast<std::size_t>(cls) % 6];
            for (const auto& x : set) s.points.emplace_back(x[0], x[1]);
            series.push_back(std::move(s));
        }
        write_scatter_svg((std::filesystem::path(dir) / "scatter.svg").string(),
                          "generated samples", series);
        manifest.add_file("scatter.svg");
    }
}

// -- verbs -------------------------------------------------------------------------

inline Denoiser load_denoiser(const std::string& path, std::size_t d, int num_classes) {
    if (path.empty() || !std::filesystem::exists(path)) {
        throw PrerequisiteError("missing checkpoint: " + (path.empty() ? "<unset>" : path));
    }
    Rng dummy(0);
    Denoiser den = Denoiser::make(d, num_classes, dummy);
    restore_into(den.params, load_checkpoint(path));
    return den;
}

inline int cmd_train_base(const RunConfig& cfg, unsigned threads) {
    (void)threads;
    std::filesystem::create_directories(cfg.out);
    Manifest manifest(cfg.out, cfg, "train-base");
    DataBundle data = make_dataset(cfg);
    NoiseSchedule sched = make_schedule(cfg);
    TrainBaseConfig tc{cfg.train.steps, static_cast<std::size_t>(cfg.train.batch), cfg.train.lr,
                       cfg.train.conditional};
    auto [den, log] = train_base(data.ds, sched, tc, cfg.seed);
    {
        CsvWriter csv((std::filesystem::path(cfg.out) / "train_log.csv").string(),
                      {"step", "loss"});
        for (const auto& row : log) {
            if (!std::isfinite(row.loss)) {
                throw DivergenceError(row.step, "train-base: non-finite loss");
            }
            csv.row({double(row.step), row.loss});
        }
    }
    manifest.add_file("train_log.csv");
    save_checkpoint((std::filesystem::path(cfg.out) / "base.ckpt").string(), den.params);
    manifest.add_file("base.ckpt");
    manifest.finalize();
    return 0;
}

namespace detail_harness {

inline void write_lambda_svg(const std::string& dir, const std::vector<double>& lambdas,
                             Manifest& manifest) {
    write_line_svg((std::filesystem::path(dir) / "lambda.svg").string(), "lambda trajectory",
                   {{"lambda", "#1f77b4", lambdas}});
    manifest.add_file("lambda.svg");
}

// Class-conditional forward-marginal log density under the synthetic spec:
// mixture over components of N(gamma_t mu, (gamma_t std)^2 + sigma_t^2).
inline ClassLogDensity spec_log_density(const GaussMixtureSpec& spec,
                                        const NoiseSchedule& sched) {
    return [&spec, &sched](const std::vector<double>& z, int cls, int t) {
        const auto& comps = spec.per_class.at(static_cast<std::size_t>(cls));
        const double gamma = sched.gamma_at(t), sigma = sched.sigma_at(t);
        double mx = -1e300;
        std::vector<double> lp(comps.size());
        for (std::size_t i = 0; i < comps.size(); ++i) {
            const double var = gamma * gamma * comps[i].std * comps[i].std + sigma * sigma;
            double acc = std::log(comps[i].weight) -
                         0.5 * double(z.size()) * std::log(2.0 * M_PI * var);
            for (std::size_t j = 0; j < z.size(); ++j) {
                const double r = z[j] - gamma * comps[i].mean[j];
                acc -= r * r / (2.0 * var);
            }
            lp[i] = acc;
            mx = std::max(mx, acc);
        }
        double s = 0.0;
        for (double v : lp) s += std::exp(v - mx);
        return mx + std::log(s);
    };
}

}  // namespace detail_harness

inline int cmd_unlearn(const RunConfig& cfg, unsigned threads) {
    (void)threads;
    std::filesystem::create_directories(cfg.out);
    Manifest manifest(cfg.out, cfg, "unlearn");
    DataBundle data = make_dataset(cfg);
    NoiseSchedule sched = make_schedule(cfg);
    SissWeights weights = make_weights(cfg, data.split);
    Denoiser base = load_denoiser(cfg.unlearn.base_checkpoint, data.ds.d,
                                  cfg.train.conditional ? data.ds.num_classes : 0);
    const auto out = std::filesystem::path(cfg.out);

    auto check_finite = [](long step, double loss) {
        if (!std::isfinite(loss)) throw DivergenceError(step, "unlearn: non-finite loss");
    };

    switch (cfg.method) {
        case Method::Base:
            throw ConfigError("unlearn: method=base is handled by the train-base verb");
        case Method::Static: {
            Denoiser den = base;
            AdamState opt = AdamState::make(den.params, cfg.unlearn.lr);
            ClipConfig clip{cfg.unlearn.clip, cfg.unlearn.clip_factor};
            Rng rng(hash_stream(cfg.seed, "siss"));
            CsvWriter csv((out / "unlearn_log.csv").string(),
                          {"step", "lambda", "retain_loss", "forget_loss", "total_loss",
                           "retain_grad_norm", "forget_grad_norm"});
            for (long step = 0; step < cfg.unlearn.steps; ++step) {
                SissStepRecord rec =
                    static_step(den, sched, data.ds, data.split, weights, cfg.unlearn.lambda,
                                opt, clip, rng, static_cast<std::size_t>(cfg.unlearn.pairs));
                check_finite(step, rec.total_loss);
                csv.row({double(step), rec.lambda, rec.retain_loss, rec.forget_loss,
                         rec.total_loss, rec.retain_grad_norm, rec.forget_grad_norm});
            }
            manifest.add_file("unlearn_log.csv");
            save_checkpoint((out / "unlearned.ckpt").string(), den.params);
            manifest.add_file("unlearned.ckpt");
            break;
        }
        case Method::Adaptive: {
            Denoiser den = base;
            Rng init_rng(hash_stream(cfg.seed, "adaptive.init"));
            InferenceNet inf = InferenceNet::make(init_rng);
            AdamState opt_theta = AdamState::make(den.params, cfg.unlearn.lr);
            AdamState opt_phi = AdamState::make(inf.net.params, cfg.adaptive.lr_phi);
            RunningNorm<4> norm;
            AdaptiveConfig acfg{cfg.adaptive.beta, static_cast<std::size_t>(cfg.unlearn.pairs)};
            Rng rng(hash_stream(cfg.seed, "adaptive.steps"));
            CsvWriter csv((out / "unlearn_log.csv").string(),
                          {"step", "lambda", "mu", "sigma", "kl", "elbo", "retain_loss",
                           "forget_loss", "total_loss"});
            std::vector<double> lambdas;
            SissStepRecord prev = adaptive_warmup(den, sched, data.ds, data.split, weights,
                                                  opt_theta, norm, rng, acfg.pairs);
            for (long step = 0; step < cfg.unlearn.steps; ++step) {
                AdaptiveStepRecord rec = elbo_step(den, inf, sched, data.ds, data.split, weights,
                                                   acfg, opt_theta, opt_phi, norm, prev, rng);
                check_finite(step, rec.siss.total_loss);
                csv.row({double(step), rec.siss.lambda, rec.mu, rec.sigma, rec.kl, rec.elbo,
                         rec.siss.retain_loss, rec.siss.forget_loss, rec.siss.total_loss});
                lambdas.push_back(rec.siss.lambda);
                if (!rec.skipped) prev = rec.siss;
            }
            manifest.add_file("unlearn_log.csv");
            detail_harness::write_lambda_svg(cfg.out, lambdas, manifest);
            save_checkpoint((out / "unlearned.ckpt").string(), den.params);
            manifest.add_file("unlearned.ckpt");
            save_checkpoint((out / "inference.ckpt").string(), inf.net.params);
            manifest.add_file("inference.ckpt");
            break;
        }
        case Method::RlPpoOpt1:
        case Method::RlPpoOpt2: {
            RlRunConfig rc;
            rc.env.horizon = static_cast<int>(cfg.rl.horizon);
            rc.env.theta_lr = cfg.unlearn.lr;
            rc.env.alpha_smooth = cfg.rl.alpha_smooth;
            rc.env.pairs = static_cast<std::size_t>(cfg.unlearn.pairs);
            rc.env.grad_norm_features = cfg.rl.grad_norm_features;
            rc.ppo = PpoConfig{cfg.rl.gamma,        cfg.rl.gae_lambda,
                               cfg.rl.clip_eps,     cfg.rl.entropy_coef,
                               cfg.rl.kl_coef,      static_cast<int>(cfg.rl.ppo_epochs),
                               static_cast<std::size_t>(cfg.rl.minibatch), cfg.rl.lr};
            rc.episodes_per_iter = static_cast<int>(cfg.rl.episodes);
            rc.iterations = static_cast<int>(cfg.rl.iterations);
            rc.total_steps = cfg.rl.total_steps;
            rc.update_every = static_cast<int>(cfg.rl.update_every);
            rc.window = static_cast<std::size_t>(cfg.rl.window);
            RlRunResult res =
                cfg.method == Method::RlPpoOpt1
                    ? run_option1(base, sched, data.ds, data.split, weights, rc, cfg.seed)
                    : run_option2(base, sched, data.ds, data.split, weights, rc, cfg.seed);
            {
                CsvWriter csv((out / "rl_iterations.csv").string(),
                              {"iteration", "mean_episode_return", "policy_objective",
                               "value_loss"});
                for (const auto& it : res.iterations) {
                    check_finite(it.iteration, it.mean_episode_return);
                    csv.row({double(it.iteration), it.mean_episode_return, it.policy_objective,
                             it.value_loss});
                }
            }
            manifest.add_file("rl_iterations.csv");
            {
                CsvWriter csv((out / "lambda_trajectory.csv").string(),
                              {"step", "lambda", "reward"});
                std::vector<double> lambdas;
                for (std::size_t i = 0; i < res.final_trajectory.size(); ++i) {
                    const Transition& tr = res.final_trajectory[i];
                    csv.row({double(i), tr.lambda, tr.reward});
                    lambdas.push_back(tr.lambda);
                }
                detail_harness::write_lambda_svg(cfg.out, lambdas, manifest);
            }
            manifest.add_file("lambda_trajectory.csv");
            save_checkpoint((out / "unlearned.ckpt").string(), res.unlearned.params);
            manifest.add_file("unlearned.ckpt");
            save_checkpoint((out / "policy.ckpt").string(), res.policy.net.params);
            manifest.add_file("policy.ckpt");
            break;
        }
        case Method::RlSac: {
            EnvConfig env_cfg;
            env_cfg.theta_lr = cfg.unlearn.lr;
            env_cfg.alpha_smooth = cfg.rl.alpha_smooth;
            env_cfg.pairs = static_cast<std::size_t>(cfg.unlearn.pairs);
            env_cfg.grad_norm_features = cfg.rl.grad_norm_features;
            SacConfig sc{cfg.rl.gamma,
                         cfg.sac.tau,
                         cfg.sac.alpha_ent,
                         cfg.sac.lr,
                         static_cast<std::size_t>(cfg.sac.buffer),
                         static_cast<std::size_t>(cfg.sac.batch),
                         cfg.sac.total_steps,
                         cfg.sac.warmup};
            SacRunResult res =
                run_sac(base, sched, data.ds, data.split, weights, env_cfg, sc, cfg.seed);
            {
                CsvWriter csv((out / "lambda_trajectory.csv").string(),
                              {"step", "lambda", "reward"});
                std::vector<double> lambdas;
                for (std::size_t i = 0; i < res.trajectory.size(); ++i) {
                    const Transition& tr = res.trajectory[i];
                    check_finite(static_cast<long>(i), tr.reward);
                    csv.row({double(i), tr.lambda, tr.reward});
                    lambdas.push_back(tr.lambda);
                }
                detail_harness::write_lambda_svg(cfg.out, lambdas, manifest);
            }
            manifest.add_file("lambda_trajectory.csv");
            save_checkpoint((out / "unlearned.ckpt").string(), res.unlearned.params);
            manifest.add_file("unlearned.ckpt");
            save_checkpoint((out / "policy.ckpt").string(), res.policy.net.params);
            manifest.add_file("policy.ckpt");
            break;
        }
        case Method::Sfd:
        case Method::SfdMulticlass: {
            if (!data.has_oracle && cfg.method == Method::SfdMulticlass) {
                throw ConfigError("sfd-multiclass requires the synthetic oracle dataset");
            }
            SfdConfig sc{cfg.sfd.alpha,
                         cfg.sfd.lambda_sfd,
                         static_cast<std::size_t>(cfg.sfd.batch),
                         cfg.sfd.lr_gen,
                         cfg.sfd.lr_fake,
                         cfg.sfd.rounds};
            CsvWriter csv((out / "sfd_log.csv").string(),
                          {"round", "fake_loss", "distill_loss", "forget_loss", "total_loss",
                           "omega_mean", "lambda"});
            Rng init_rng(hash_stream(cfg.seed, "sfd.init"));
            Generator gen = Generator::make(base.d, base.num_classes, init_rng);
            FakeScoreNet fake = FakeScoreNet::make(base.d, base.num_classes, init_rng);
            AdamState opt_gen = AdamState::make(gen.params, sc.lr_gen);
            AdamState opt_fake = AdamState::make(fake.net.params, sc.lr_fake);
            Rng rng(hash_stream(cfg.seed, "sfd.rounds"));
            if (cfg.method == Method::Sfd) {
                SfdClassConfig classes;
                classes.c_f = cfg.sfd.forget_class;
                classes.c_o = cfg.sfd.override_class;
                for (int c = 0; c < base.num_classes; ++c) {
                    if (c != classes.c_f) classes.retain.push_back(c);
                }
                for (long r = 0; r < sc.rounds; ++r) {
                    SfdRoundRecord rec = sfd_round(gen, fake, base, sched, classes, sc, opt_gen,
                                                   opt_fake, rng);
                    check_finite(r, rec.total_loss);
                    csv.row({double(r), rec.fake_loss, rec.distill_loss, rec.forget_loss,
                             rec.total_loss, rec.omega_mean, rec.lambda});
                }
            } else {
                Rng inf_rng(hash_stream(cfg.seed, "sfd.inference"));
                InferenceNet inf = InferenceNet::make(inf_rng);
                std::vector<int> retain;
                for (int c = 0; c < base.num_classes; ++c) {
                    if (c != cfg.sfd.forget_class) retain.push_back(c);
                }
                ClassLogDensity logq = detail_harness::spec_log_density(data.spec, sched);
                RunningNorm<4> norm;
                SissStepRecord prev;  // zero context for the first round
                for (long r = 0; r < sc.rounds; ++r) {
                    ContextVector ctx = build_context(prev, norm);
                    SfdRoundRecord rec = multiclass_adaptive_round(
                        gen, fake, base, inf, ctx, sched, retain, cfg.sfd.forget_class, logq,
                        sc, opt_gen, opt_fake, rng);
                    check_finite(r, rec.total_loss);
                    csv.row({double(r), rec.fake_loss, rec.distill_loss, rec.forget_loss,
                             rec.total_loss, rec.omega_mean, rec.lambda});
                    prev.retain_loss = rec.distill_loss;
                    prev.forget_loss = rec.forget_loss;
                    prev.retain_grad_norm = rec.fake_loss;
                    prev.forget_grad_norm = rec.omega_mean;
                }
            }
            manifest.add_file("sfd_log.csv");
            save_checkpoint((out / "unlearned.ckpt").string(), gen.params);
            manifest.add_file("unlearned.ckpt");
            save_checkpoint((out / "fake_score.ckpt").string(), fake.net.params);
            manifest.add_file("fake_score.ckpt");
            break;
        }
    }
    manifest.finalize();
    return 0;
}

inline int cmd_eval(const RunConfig& cfg, unsigned threads) {
    std::filesystem::create_directories(cfg.out);
    Manifest manifest(cfg.out, cfg, "eval");
    DataBundle data = make_dataset(cfg);
    if (!data.has_oracle) {
        throw ConfigError("eval: metric oracle requires the synthetic dataset");
    }
    NoiseSchedule sched = make_schedule(cfg);
    const std::string& path = cfg.eval.checkpoint;
    if (path.empty() || !std::filesystem::exists(path)) {
        throw PrerequisiteError("eval: missing checkpoint: " +
                                (path.empty() ? "<unset>" : path));
    }
    ParamSet params = load_checkpoint(path);
    const bool is_generator =
        !params.names.empty() && params.names[0].rfind("gen.", 0) == 0;

    MetricReport report;
    std::map<int, SampleSet> by_class;
    const auto n = static_cast<std::size_t>(cfg.eval.samples);
    if (is_generator) {
        Rng dummy(0);
        Generator gen = Generator::make(data.ds.d, data.ds.num_classes, dummy);
        restore_into(gen.params, params);
        for (int c = 0; c < data.ds.num_classes; ++c) {
            Rng rng(hash_stream(cfg.seed, "eval.gen." + std::to_string(c)));
            std::vector<int> labels(n, c);
            Tensor x = generator_forward(gen, n, labels, rng);
            SampleSet set(n, std::vector<double>(gen.d));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < gen.d; ++j) set[i][j] = x.at(i, j);
            by_class[c] = std::move(set);
        }
    } else {
        Rng dummy(0);
        Denoiser den = Denoiser::make(data.ds.d,
                                      cfg.train.conditional ? data.ds.num_classes : 0, dummy);
        restore_into(den.params, params);
        for (int c = 0; c < data.ds.num_classes; ++c) {
            by_class[c] = ancestral_sample(den, sched, n, c,
                                           hash_stream(cfg.seed, "eval.gen." + std::to_string(c)),
                                           threads);
        }
    }
    report = evaluate_samples(by_class, data.spec, cfg.dataset.forget_class, cfg.seed);
    {
        std::ofstream out(std::filesystem::path(cfg.out) / "report.json", std::ios::binary);
        out << report_to_json(report).dump(2) << '\n';
    }
    manifest.add_file("report.json");
    write_samples_artifacts(cfg.out, by_class, manifest);
    manifest.finalize();
    return 0;
}

// -- cross-run report ----------------------------------------------------------------

struct CompletedRun {
    std::string dir;
    std::string method;
    std::uint64_t seed = 0;
    MetricReport report;
};

inline CompletedRun load_completed_run(const std::string& dir) {
    const auto mpath = std::filesystem::path(dir) / "manifest.json";
    const auto rpath = std::filesystem::path(dir) / "report.json";
    if (!std::filesystem::exists(mpath) || !std::filesystem::exists(rpath)) {
        throw PrerequisiteError("report: run directory missing manifest.json/report.json: " +
                                dir);
    }
    std::ifstream mi(mpath);
    ojson mj = ojson::parse(mi);
    std::ifstream ri(rpath);
    ojson rj = ojson::parse(ri);
    CompletedRun run;
    run.dir = dir;
    run.method = mj["config"]["method"].get<std::string>();
    run.seed = mj["config"]["seed"].get<std::uint64_t>();
    run.report.seed = rj["seed"].get<std::uint64_t>();
    for (const auto& [name, c] : rj["conditions"].items()) {
        MetricCell cell;
        cell.frechet = c["frechet"].get<double>();
        cell.kid = c["kid"].get<double>();
        if (c.contains("forget_rate")) cell.forget_rate = c["forget_rate"].get<double>();
        if (c.contains("ssim")) cell.ssim = c["ssim"].get<double>();
        cell.sample_count = c["sample_count"].get<std::size_t>();
        run.report.conditions[name] = cell;
    }
    return run;
}

// Per-method mean +- std over seeds for every metric/condition pair; rejects
// runs whose metric keys disagree.
inline int write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");
    std::filesystem::create_directories(out_dir);
    std::vector<CompletedRun> runs;
    for (const auto& dir : run_dirs) runs.push_back(load_completed_run(dir));

    // Key consistency: every run within a method must expose identical
    // condition/metric keys.
    auto keys_of = [](const MetricReport& r) {
        std::vector<std::string> keys;
        for (const auto& [name, cell] : r.conditions) {
            keys.push_back(name + ":frechet");
            keys.push_back(name + ":kid");
            if (cell.forget_rate) keys.push_back(name + ":forget_rate");
            if (cell.ssim) keys.push_back(name + ":ssim");
        }
        return keys;
    };
    std::map<std::string, std::vector<const CompletedRun*>> by_method;
    for (const auto& r : runs) by_method[r.method].push_back(&r);
    for (const auto& [method, group] : by_method) {
        const auto ref_keys = keys_of(group.front()->report);
        for (const CompletedRun* r : group) {
            if (keys_of(r->report) != ref_keys) {
                throw FormatError("report: inconsistent metric keys between " +
                                  group.front()->dir + " and " + r->dir);
            }
        }
    }

    ojson j;
    CsvWriter csv((std::filesystem::path(out_dir) / "comparison.csv").string(),
                  {"method", "condition", "metric", "mean", "std", "runs"});
    for (const auto& [method, group] : by_method) {
        ojson mj;
        for (const auto& [cond, first_cell] : group.front()->report.conditions) {
            auto emit = [&](const std::string& metric, auto getter) {
                std::vector<double> vals;
                for (const CompletedRun* r : group) {
                    vals.push_back(getter(r->report.conditions.at(cond)));
                }
                double mean = 0.0;
                for (double v : vals) mean += v;
                mean /= double(vals.size());
                double var = 0.0;
                for (double v : vals) var += (v - mean) * (v - mean);
                const double sd = vals.size() > 1 ? std::sqrt(var / double(vals.size() - 1))
                                                  : 0.0;
                mj[cond][metric] = {{"mean", mean}, {"std", sd}, {"runs", vals.size()}};
                csv.row_strings({method, cond, metric, format_double(mean), format_double(sd),
                                 std::to_string(vals.size())});
            };
            emit("frechet", [](const MetricCell& c) { return c.frechet; });
            emit("kid", [](const MetricCell& c) { return c.kid; });
            if (first_cell.forget_rate) {
                emit("forget_rate", [](const MetricCell& c) { return *c.forget_rate; });
            }
            if (first_cell.ssim) {
                emit("ssim", [](const MetricCell& c) { return *c.ssim; });
            }
        }
        j[method] = mj;
    }
    {
        std::ofstream out(std::filesystem::path(out_dir) / "comparison.json", std::ios::binary);
        out << j.dump(2) << '\n';
    }

    // Lambda trajectory overlay for any runs that logged one.
    std::vector<LineSeries> lambda_series;
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b"};
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (const char* name : {"lambda_trajectory.csv", "unlearn_log.csv"}) {
            const auto path = std::filesystem::path(runs[i].dir) / name;
            if (!std::filesystem::exists(path)) continue;
            std::ifstream in(path);
            std::string line;
            if (!std::getline(in, line)) continue;
            // find the lambda column
            std::vector<std::string> cols;
            std::size_t pos = 0;
            while (pos <= line.size()) {
                const std::size_t c = line.find(',', pos);
                cols.push_back(line.substr(pos, c == std::string::npos ? std::string::npos
                                                                       : c - pos));
                pos = c == std::string::npos ? line.size() + 1 : c + 1;
            }
            std::size_t li = cols.size();
            for (std::size_t k = 0; k < cols.size(); ++k)
                if (cols[k] == "lambda") li = k;
            if (li == cols.size()) continue;
            LineSeries s;
            s.label = runs[i].method + " seed " + std::to_string(runs[i].seed);
            s.color = kColors[i % 6];
            while (std::getline(in, line)) {
                std::size_t p = 0;
                std::string cell;
                for (std::size_t k = 0; k <= li; ++k) {
                    const std::size_t c = line.find(',', p);
                    cell = line.substr(p, c == std::string::npos ? std::string::npos : c - p);
                    p = c == std::string::npos ? line.size() + 1 : c + 1;
                }
                s.ys.push_back(std::stod(cell));
            }
            if (!s.ys.empty()) lambda_series.push_back(std::move(s));
            break;
        }
    }
    if (!lambda_series.empty()) {
        write_line_svg((std::filesystem::path(out_dir) / "lambda_trajectories.svg").string(),
                       "lambda trajectories", lambda_series);
    }
    return 0;
}

// -- entry point -----------------------------------------------------------------------

inline int run_command(const std::string& verb, const RunConfig& cfg,
                       const std::vector<std::string>& extra_dirs, unsigned threads) {
    try {
        if (verb == "train-base") return cmd_train_base(cfg, threads);
        if (verb == "unlearn") return cmd_unlearn(cfg, threads);
        if (verb == "eval") return cmd_eval(cfg, threads);
        if (verb == "report") return write_report(extra_dirs, cfg.out);
        throw ConfigError("unknown verb: " + verb);
    } catch (const PrerequisiteError& e) {
        std::fprintf(stderr, "error (missing prerequisite): %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error (divergence): %s\n", e.what());
        return 3;
    }
}

}  // namespace unlearn
