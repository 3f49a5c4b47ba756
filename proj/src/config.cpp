#include "crossecg/config.hpp"

#include <fstream>

namespace crossecg {

namespace fs = std::filesystem;
using nlohmann::json;

json model_config_to_json(const ModelConfig& c) {
    json j;
    j["branch_kernels"] = c.branch_kernels;
    j["branch_channels"] = c.branch_channels;
    j["deep_channels"] = c.deep_channels;
    j["attention_reduction"] = c.attention_reduction;
    j["embedding_dim"] = c.embedding_dim;
    j["n_subjects"] = c.n_subjects;
    j["use_multi_scale"] = c.use_multi_scale;
    j["use_deep_conv"] = c.use_deep_conv;
    j["use_attention"] = c.use_attention;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.branch_kernels = j.value("branch_kernels", c.branch_kernels);
    c.branch_channels = j.value("branch_channels", c.branch_channels);
    c.deep_channels = j.value("deep_channels", c.deep_channels);
    c.attention_reduction = j.value("attention_reduction", c.attention_reduction);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.n_subjects = j.value("n_subjects", c.n_subjects);
    c.use_multi_scale = j.value("use_multi_scale", c.use_multi_scale);
    c.use_deep_conv = j.value("use_deep_conv", c.use_deep_conv);
    c.use_attention = j.value("use_attention", c.use_attention);
    return c;
}

namespace {

json train_config_to_json(const TrainConfig& c) {
    json j;
    j["lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["plateau"] = {{"factor", c.plateau.factor},
                    {"patience", c.plateau.patience},
                    {"min_lr", c.plateau.min_lr}};
    j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
    j["sampler"] = {{"classes_per_batch", c.classes_per_batch},
                    {"samples_per_class", c.samples_per_class}};
    j["augment_target"] = c.augment_target;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("plateau")) {
        const auto& p = j.at("plateau");
        c.plateau.factor = p.value("factor", c.plateau.factor);
        c.plateau.patience = p.value("patience", c.plateau.patience);
        c.plateau.min_lr = p.value("min_lr", c.plateau.min_lr);
    }
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        c.adam.beta1 = a.value("beta1", c.adam.beta1);
        c.adam.beta2 = a.value("beta2", c.adam.beta2);
        c.adam.eps = a.value("eps", c.adam.eps);
    }
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        c.classes_per_batch = s.value("classes_per_batch", c.classes_per_batch);
        c.samples_per_class = s.value("samples_per_class", c.samples_per_class);
    }
    c.augment_target = j.value("augment_target", c.augment_target);
    return c;
}

json loss_config_to_json(const LossConfig& c) {
    json j;
    j["alpha"] = c.alpha;
    j["lambda"] = c.lambda_thresh;
    j["tau"] = c.tau_clip;
    j["beta_p"] = c.beta_p;
    j["beta_n"] = c.beta_n;
    j["eps"] = c.eps;
    j["focal_gamma"] = c.focal_gamma;
    return j;
}

LossConfig loss_config_from_json(const json& j) {
    LossConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.lambda_thresh = j.value("lambda", c.lambda_thresh);
    c.tau_clip = j.value("tau", c.tau_clip);
    c.beta_p = j.value("beta_p", c.beta_p);
    c.beta_n = j.value("beta_n", c.beta_n);
    c.eps = j.value("eps", c.eps);
    c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
    return c;
}

} // namespace

json run_config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["model"] = model_config_to_json(c.model);
    j["train"] = train_config_to_json(c.train);
    j["loss"] = loss_config_to_json(c.loss);
    j["auth"] = {{"w_g", c.auth.w_g}, {"w_p", c.auth.w_p}, {"w_l", c.auth.w_l},
                 {"tau_b", c.auth.tau_b}};
    j["data"] = {{"dir", c.data.dir},
                 {"train_fraction", c.data.train_fraction},
                 {"val_fraction", c.data.val_fraction}};
    if (!c.digest.empty()) j["digest"] = c.digest;
    return j;
}

std::string config_digest(const RunConfig& c) {
    RunConfig tmp = c;
    tmp.digest.clear();
    return hex64(fnv1a(run_config_to_json(tmp).dump()));
}

RunConfig default_run_config() {
    RunConfig c;
    c.train.seed = c.seed;
    c.digest = config_digest(c);
    return c;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    if (j.contains("auth")) {
        const auto& a = j.at("auth");
        c.auth.w_g = a.value("w_g", c.auth.w_g);
        c.auth.w_p = a.value("w_p", c.auth.w_p);
        c.auth.w_l = a.value("w_l", c.auth.w_l);
        c.auth.tau_b = a.value("tau_b", c.auth.tau_b);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.data.dir = d.value("dir", c.data.dir);
        c.data.train_fraction = d.value("train_fraction", c.data.train_fraction);
        c.data.val_fraction = d.value("val_fraction", c.data.val_fraction);
    }
    c.train.seed = c.seed; // one seed drives everything

    std::vector<std::string> problems;
    auto check = [&](bool ok, const std::string& field, const std::string& why) {
        if (!ok) problems.push_back(field + ": " + why);
    };
    check(c.train.lr > 0.0, "train.lr", "must be positive");
    check(c.train.batch_size >= 1, "train.batch_size", "must be positive");
    check(c.train.epochs >= 1, "train.epochs", "must be positive");
    check(c.train.classes_per_batch >= 1 && c.train.samples_per_class >= 1,
          "train.sampler", "P and K must be positive");
    check(c.train.classes_per_batch * c.train.samples_per_class == c.train.batch_size,
          "train.sampler", "P*K must equal batch_size");
    check(c.train.plateau.factor > 0.0 && c.train.plateau.factor < 1.0,
          "train.plateau.factor", "must lie in (0,1)");
    check(c.train.plateau.patience >= 1, "train.plateau.patience", "must be positive");
    check(c.train.plateau.min_lr > 0.0, "train.plateau.min_lr", "must be positive");
    check(c.loss.alpha >= 0.0 && c.loss.alpha <= 1.0, "loss.alpha", "must lie in [0,1]");
    check(c.loss.tau_clip > 0.0, "loss.tau", "must be positive");
    check(c.loss.beta_p > 0.0 && c.loss.beta_n > 0.0, "loss.beta_p/beta_n", "must be positive");
    check(c.auth.w_g >= 0.0 && c.auth.w_p >= 0.0 && c.auth.w_l >= 0.0,
          "auth.weights", "must be non-negative");
    check(c.data.train_fraction > 0.0 && c.data.train_fraction < 1.0,
          "data.train_fraction", "must lie in (0,1)");
    check(c.data.val_fraction > 0.0 && c.data.val_fraction < 1.0,
          "data.val_fraction", "must lie in (0,1)");
    check(c.data.train_fraction + c.data.val_fraction <= 1.0 + 1e-12,
          "data.fractions", "train + val must not exceed 1");
    for (int k : c.model.branch_kernels)
        check(k >= 1 && k % 2 == 1, "model.branch_kernels", "kernel sizes must be odd");
    check(c.model.branch_channels >= 1, "model.branch_channels", "must be positive");
    check(c.model.deep_channels.size() == 2, "model.deep_channels", "must list two widths");
    if (c.model.deep_channels.size() == 2) {
        check(!c.model.use_multi_scale ||
                  c.model.deep_channels[0] ==
                      c.model.branch_channels * static_cast<int>(c.model.branch_kernels.size()),
              "model.deep_channels", "first width must equal branch_channels * |branch_kernels|");
        check(c.model.attention_reduction >= 1 &&
                  c.model.deep_channels[1] % c.model.attention_reduction == 0,
              "model.attention_reduction", "must divide the deep output width");
    }
    check(c.model.embedding_dim >= 1, "model.embedding_dim", "must be positive");

    if (!problems.empty()) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
        fail("ConfigError", msg);
    }
    c.digest = config_digest(c);
    return c;
}

RunConfig validate_config(const fs::path& path) {
    if (!fs::exists(path)) fail("ConfigError", "config file not found: " + path.string());
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json j = json::object();
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            fail("ConfigError", path.string() + ": " + e.what());
        }
    }
    return run_config_from_json(j);
}

void claim_run_dir(const fs::path& dir, const RunConfig& cfg, bool force) {
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "run_config.json";
    if (fs::exists(cfg_path) && !force) {
        std::ifstream in(cfg_path);
        json prev;
        try {
            in >> prev;
        } catch (const json::exception&) {
            prev = json::object();
        }
        const std::string old_digest = prev.value("digest", "");
        if (!old_digest.empty() && old_digest != cfg.digest)
            fail("RunDirConflict", dir.string() + " was produced by config digest " + old_digest +
                                       ", refusing to overwrite with " + cfg.digest +
                                       " (use --force)");
    }
    std::ofstream out(cfg_path);
    if (!out) fail("IoFailure", "cannot write " + cfg_path.string());
    out << run_config_to_json(cfg).dump(2) << "\n";
}

} // namespace crossecg
