#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "unlearn/toml.hpp"

namespace unlearn {

enum class Method {
    Base,
    Static,
    Adaptive,
    RlPpoOpt1,
    RlPpoOpt2,
    RlSac,
    Sfd,
    SfdMulticlass,
};

inline std::string method_name(Method m) {
    switch (m) {
        case Method::Base: return "base";
        case Method::Static: return "static";
        case Method::Adaptive: return "adaptive";
        case Method::RlPpoOpt1: return "rl-ppo-opt1";
        case Method::RlPpoOpt2: return "rl-ppo-opt2";
        case Method::RlSac: return "rl-sac";
        case Method::Sfd: return "sfd";
        case Method::SfdMulticlass: return "sfd-multiclass";
    }
    throw ContractViolation("method_name: unreachable");
}

inline Method method_from_name(const std::string& s) {
    for (Method m : {Method::Base, Method::Static, Method::Adaptive, Method::RlPpoOpt1,
                     Method::RlPpoOpt2, Method::RlSac, Method::Sfd, Method::SfdMulticlass}) {
        if (method_name(m) == s) return m;
    }
    throw ConfigError("method: unknown value '" + s + "'");
}

struct DatasetConfig {
    std::string kind = "contam2d";  // contam2d | idx
    long per_class = 150;
    double ratio = 1.0 / 11.0;  // contamination ratio within the forget class
    int forget_class = 1;
    std::string image_path, label_path;  // idx mode
    long side = 8;                       // idx downsample target
};

struct ScheduleConfig {
    long T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct TrainConfig {
    long steps = 2000;
    long batch = 64;
    double lr = 2e-3;
    bool conditional = true;
};

struct UnlearnConfig {
    std::string base_checkpoint;
    long steps = 1000;
    double lambda = 0.5;
    double s = 0.1;
    double lr = 5e-4;
    long pairs = 32;
    bool clip = true;
    double clip_factor = 2.0;
    std::string forget_weight_mode = "eq8";  // eq8 | alg1
};

struct AdaptiveRunConfig {
    double beta = 0.01;
    double lr_phi = 1e-3;
};

struct RlTomlConfig {
    long horizon = 200;
    long episodes = 8;
    long iterations = 25;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double entropy_coef = 0.01;
    double kl_coef = 0.0;
    double lr = 3e-4;
    double alpha_smooth = 0.01;
    double lambda_min = 0.1;
    double lambda_max = 0.9;
    long total_steps = 2000;
    long update_every = 200;
    long window = 1600;
    bool grad_norm_features = true;
    long ppo_epochs = 4;
    long minibatch = 256;
};

struct SacTomlConfig {
    double tau = 0.005;
    double alpha_ent = 0.1;
    long buffer = 50000;
    long batch = 64;
    long total_steps = 2000;
    long warmup = 64;
    double lr = 3e-4;
};

struct SfdTomlConfig {
    double alpha = 1.2;
    double lambda_sfd = 1.0;
    long rounds = 400;
    long batch = 64;
    double lr_gen = 1e-3;
    double lr_fake = 1e-3;
    int forget_class = 1;
    int override_class = 0;
};

struct EvalConfig {
    std::string checkpoint;
    long samples = 1000;
};

struct RunConfig {
    Method method = Method::Static;
    std::uint64_t seed = 0;
    std::string out = "runs/out";
    DatasetConfig dataset;
    ScheduleConfig schedule;
    TrainConfig train;
    UnlearnConfig unlearn;
    AdaptiveRunConfig adaptive;
    RlTomlConfig rl;
    SacTomlConfig sac;
    SfdTomlConfig sfd;
    EvalConfig eval;
};

namespace detail_config {

// Tracks consumed keys so anything left over is an unknown-key error with
// its source line.
class Reader {
public:
    explicit Reader(const TomlTable& t) : table_(t) {}

    const TomlValue* find(const std::string& key) {
        auto it = table_.find(key);
        if (it == table_.end()) return nullptr;
        used_.insert(key);
        return &it->second;
    }

    void number(const std::string& key, double& dst, double lo, double hi) {
        if (const TomlValue* v = find(key)) {
            const double x = v->as_number();
            check_range(key, x, lo, hi, v->line);
            dst = x;
        }
    }

    void integer(const std::string& key, long& dst, long lo, long hi) {
        if (const TomlValue* v = find(key)) {
            const double x = v->as_number();
            check_range(key, x, double(lo), double(hi), v->line);
            dst = static_cast<long>(x);
        }
    }

    void integer(const std::string& key, int& dst, int lo, int hi) {
        long tmp = dst;
        integer(key, tmp, long(lo), long(hi));
        dst = static_cast<int>(tmp);
    }

    void boolean(const std::string& key, bool& dst) {
        if (const TomlValue* v = find(key)) dst = v->as_bool();
    }

    void string(const std::string& key, std::string& dst) {
        if (const TomlValue* v = find(key)) dst = v->as_string();
    }

    void finish() const {
        for (const auto& [key, value] : table_) {
            if (!used_.count(key)) {
                throw ConfigError("line " + std::to_string(value.line) + ": unknown key '" +
                                  key + "'");
            }
        }
    }

private:
    static void check_range(const std::string& key, double x, double lo, double hi, int line) {
        if (x < lo || x > hi) {
            throw ConfigError("line " + std::to_string(line) + ": " + key + " = " +
                              std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
        }
    }

    const TomlTable& table_;
    std::set<std::string> used_;
};

}  // namespace detail_config

// Parses + validates; defaults applied for every absent key. Unknown keys,
// type mismatches, and range violations raise ConfigError with the line.
inline RunConfig parse_config(const std::string& text) {
    TomlTable table = parse_toml(text);
    detail_config::Reader r(table);
    RunConfig c;

    if (const TomlValue* v = r.find("method")) c.method = method_from_name(v->as_string());
    if (const TomlValue* v = r.find("seed")) {
        const double x = v->as_number();
        if (x < 0) throw ConfigError("line " + std::to_string(v->line) + ": seed must be >= 0");
        c.seed = static_cast<std::uint64_t>(x);
    }
    r.string("out", c.out);

    r.string("dataset.kind", c.dataset.kind);
    if (c.dataset.kind != "contam2d" && c.dataset.kind != "idx") {
        throw ConfigError("dataset.kind: unknown value '" + c.dataset.kind + "'");
    }
    r.integer("dataset.per_class", c.dataset.per_class, 2L, 1000000L);
    r.number("dataset.ratio", c.dataset.ratio, 1e-9, 1.0 - 1e-9);
    r.integer("dataset.forget_class", c.dataset.forget_class, 0, 1000);
    r.string("dataset.image_path", c.dataset.image_path);
    r.string("dataset.label_path", c.dataset.label_path);
    r.integer("dataset.side", c.dataset.side, 1L, 64L);

    r.integer("schedule.T", c.schedule.T, 1L, 10000L);
    r.number("schedule.beta_start", c.schedule.beta_start, 1e-12, 1.0 - 1e-9);
    r.number("schedule.beta_end", c.schedule.beta_end, 1e-12, 1.0 - 1e-9);
    if (c.schedule.beta_start > c.schedule.beta_end) {
        throw ConfigError("schedule.beta_start must be <= schedule.beta_end");
    }

    r.integer("train.steps", c.train.steps, 1L, 100000000L);
    r.integer("train.batch", c.train.batch, 1L, 100000L);
    r.number("train.lr", c.train.lr, 0.0, 1.0);
    r.boolean("train.conditional", c.train.conditional);

    r.string("unlearn.base_checkpoint", c.unlearn.base_checkpoint);
    r.integer("unlearn.steps", c.unlearn.steps, 1L, 100000000L);
    r.number("unlearn.lambda", c.unlearn.lambda, 0.0, 1.0);
    r.number("unlearn.s", c.unlearn.s, 0.0, 100.0);
    r.number("unlearn.lr", c.unlearn.lr, 0.0, 1.0);
    r.integer("unlearn.pairs", c.unlearn.pairs, 1L, 100000L);
    r.boolean("unlearn.clip", c.unlearn.clip);
    r.number("unlearn.clip_factor", c.unlearn.clip_factor, 0.0, 1e6);
    r.string("unlearn.forget_weight_mode", c.unlearn.forget_weight_mode);
    if (c.unlearn.forget_weight_mode != "eq8" && c.unlearn.forget_weight_mode != "alg1") {
        throw ConfigError("unlearn.forget_weight_mode: unknown value '" +
                          c.unlearn.forget_weight_mode + "'");
    }

    r.number("adaptive.beta", c.adaptive.beta, 0.0, 1e6);
    r.number("adaptive.lr_phi", c.adaptive.lr_phi, 0.0, 1.0);

    r.integer("rl.horizon", c.rl.horizon, 1L, 1000000L);
    r.integer("rl.episodes", c.rl.episodes, 1L, 10000L);
    r.integer("rl.iterations", c.rl.iterations, 1L, 100000L);
    r.number("rl.gamma", c.rl.gamma, 0.0, 1.0);
    r.number("rl.gae_lambda", c.rl.gae_lambda, 0.0, 1.0);
    r.number("rl.clip_eps", c.rl.clip_eps, 1e-6, 1.0);
    r.number("rl.entropy_coef", c.rl.entropy_coef, 0.0, 10.0);
    r.number("rl.kl_coef", c.rl.kl_coef, 0.0, 10.0);
    r.number("rl.lr", c.rl.lr, 0.0, 1.0);
    r.number("rl.alpha_smooth", c.rl.alpha_smooth, 0.0, 1e6);
    r.number("rl.lambda_min", c.rl.lambda_min, 0.0, 1.0);
    r.number("rl.lambda_max", c.rl.lambda_max, 0.0, 1.0);
    if (c.rl.lambda_min >= c.rl.lambda_max) {
        throw ConfigError("rl.lambda_min must be < rl.lambda_max");
    }
    r.integer("rl.total_steps", c.rl.total_steps, 1L, 100000000L);
    r.integer("rl.update_every", c.rl.update_every, 1L, 100000000L);
    r.integer("rl.window", c.rl.window, 1L, 100000000L);
    r.boolean("rl.grad_norm_features", c.rl.grad_norm_features);
    r.integer("rl.ppo_epochs", c.rl.ppo_epochs, 1L, 1000L);
    r.integer("rl.minibatch", c.rl.minibatch, 1L, 1000000L);

    r.number("sac.tau", c.sac.tau, 0.0, 1.0);
    r.number("sac.alpha_ent", c.sac.alpha_ent, 0.0, 100.0);
    r.integer("sac.buffer", c.sac.buffer, 1L, 100000000L);
    r.integer("sac.batch", c.sac.batch, 1L, 1000000L);
    r.integer("sac.total_steps", c.sac.total_steps, 1L, 100000000L);
    r.integer("sac.warmup", c.sac.warmup, 0L, 100000000L);
    r.number("sac.lr", c.sac.lr, 0.0, 1.0);

    r.number("sfd.alpha", c.sfd.alpha, 0.0, 10.0);
    r.number("sfd.lambda_sfd", c.sfd.lambda_sfd, 0.0, 1e6);
    r.integer("sfd.rounds", c.sfd.rounds, 1L, 100000000L);
    r.integer("sfd.batch", c.sfd.batch, 1L, 1000000L);
    r.number("sfd.lr_gen", c.sfd.lr_gen, 0.0, 1.0);
    r.number("sfd.lr_fake", c.sfd.lr_fake, 0.0, 1.0);
    r.integer("sfd.forget_class", c.sfd.forget_class, 0, 1000);
    r.integer("sfd.override_class", c.sfd.override_class, 0, 1000);

    r.string("eval.checkpoint", c.eval.checkpoint);
    r.integer("eval.samples", c.eval.samples, 100L, 10000000L);

    r.finish();
    return c;
}

}  // namespace unlearn
