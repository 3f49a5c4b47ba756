#include "crossecg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "crossecg/config.hpp"

namespace crossecg {

namespace fs = std::filesystem;
using nlohmann::json;

void adam_step(ParamStore& params, OptimState& state, const AdamConfig& cfg) {
    for (const auto& name : params.param_names())
        for (double g : params.grad(name))
            if (!std::isfinite(g))
                fail("NonFiniteGradient", "gradient of " + name + " is not finite; step aborted");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& name : params.param_names()) {
        Tensor& p = params.param(name);
        const auto& g = params.grad(name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(g.size(), 0.0);
        if (v.empty()) v.assign(g.size(), 0.0);
        for (size_t i = 0; i < g.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.vec()[i] -= state.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double plateau_update(OptimState& state, const PlateauConfig& cfg, double val_loss) {
    if (val_loss < state.best_metric - 1e-4) {
        state.best_metric = val_loss;
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
        if (state.epochs_since_improvement >= cfg.patience) {
            state.lr = std::max(state.lr * cfg.factor, cfg.min_lr);
            state.epochs_since_improvement = 0;
        }
    }
    return state.lr;
}

std::vector<size_t> balanced_batch(const std::vector<int>& labels, int P, int K, Rng& rng) {
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    if (static_cast<int>(by_class.size()) < P)
        fail("TooFewClasses", "pool has " + std::to_string(by_class.size()) +
                                  " classes, sampler needs " + std::to_string(P));

    std::vector<int> classes;
    for (const auto& [c, _] : by_class) classes.push_back(c);
    std::shuffle(classes.begin(), classes.end(), rng);

    std::vector<size_t> batch;
    batch.reserve(static_cast<size_t>(P) * K);
    for (int ci = 0; ci < P; ++ci) {
        const auto& idxs = by_class[classes[static_cast<size_t>(ci)]];
        if (static_cast<int>(idxs.size()) >= K) {
            std::vector<size_t> pick = idxs;
            std::shuffle(pick.begin(), pick.end(), rng);
            batch.insert(batch.end(), pick.begin(), pick.begin() + K);
        } else {
            for (int k = 0; k < K; ++k)
                batch.push_back(idxs[static_cast<size_t>(
                    uniform_int(rng, 0, static_cast<std::int64_t>(idxs.size()) - 1))]);
        }
    }
    return batch;
}

namespace {

std::map<std::string, int> label_map(const std::vector<std::string>& subjects) {
    std::map<std::string, int> m;
    for (size_t i = 0; i < subjects.size(); ++i) m[subjects[i]] = static_cast<int>(i);
    return m;
}

Tensor stack_segments(const std::vector<const Segment*>& segs) {
    const int B = static_cast<int>(segs.size());
    const int L = static_cast<int>(segs[0]->samples.size());
    Tensor x({B, 1, L});
    for (int b = 0; b < B; ++b) {
        const auto& s = segs[static_cast<size_t>(b)]->samples;
        double* row = x.ptr() + static_cast<size_t>(b) * L;
        for (int l = 0; l < L; ++l) row[l] = s[static_cast<size_t>(l)];
    }
    return x;
}

} // namespace

EmbeddedSet embed_set(Model& model, const std::vector<Segment>& segments,
                      const std::vector<std::string>& subjects, int chunk) {
    const auto lmap = label_map(subjects);
    const int D = model.config().embedding_dim;
    const int C = model.config().n_subjects;
    const int N = static_cast<int>(segments.size());

    EmbeddedSet out;
    out.embeddings = Tensor({std::max(N, 1), D});
    out.logits = Tensor({std::max(N, 1), C});
    out.labels.resize(static_cast<size_t>(N));
    out.subject_ids.resize(static_cast<size_t>(N));
    out.states.resize(static_cast<size_t>(N));

    // group by length so each chunk stacks into one tensor
    std::map<size_t, std::vector<int>> by_len;
    for (int i = 0; i < N; ++i) by_len[segments[static_cast<size_t>(i)].samples.size()].push_back(i);

    for (const auto& [len, idxs] : by_len) {
        for (size_t start = 0; start < idxs.size(); start += static_cast<size_t>(chunk)) {
            const size_t stop = std::min(idxs.size(), start + static_cast<size_t>(chunk));
            std::vector<const Segment*> ptrs;
            for (size_t k = start; k < stop; ++k)
                ptrs.push_back(&segments[static_cast<size_t>(idxs[k])]);
            Tensor x = stack_segments(ptrs);
            Tensor emb = model.embed(nullptr, x, /*train=*/false);
            Tensor lg = model.classify(nullptr, emb);
            for (size_t k = start; k < stop; ++k) {
                const int row = idxs[k];
                std::copy_n(emb.ptr() + (k - start) * static_cast<size_t>(D), D,
                            out.embeddings.ptr() + static_cast<size_t>(row) * D);
                std::copy_n(lg.ptr() + (k - start) * static_cast<size_t>(C), C,
                            out.logits.ptr() + static_cast<size_t>(row) * C);
                const Segment& s = segments[static_cast<size_t>(row)];
                auto it = lmap.find(s.subject_id);
                out.labels[static_cast<size_t>(row)] = it == lmap.end() ? -1 : it->second;
                out.subject_ids[static_cast<size_t>(row)] = s.subject_id;
                out.states[static_cast<size_t>(row)] = s.state;
            }
        }
    }
    return out;
}

void write_history_csv(const std::vector<EpochStats>& history, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoFailure", "cannot write " + path.string());
    out << "epoch,train_loss,val_loss,val_acc,lr\n";
    char line[256];
    for (const auto& e : history) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_acc, e.lr);
        out << line;
    }
}

FitResult fit(Model& model, const std::vector<Segment>& train_set,
              const std::vector<Segment>& val_set, const std::vector<std::string>& subjects,
              const TrainConfig& tcfg, const LossConfig& lcfg, const fs::path& out_dir) {
    if (train_set.empty()) fail("InsufficientData", "empty training set");
    if (tcfg.classes_per_batch * tcfg.samples_per_class != tcfg.batch_size)
        fail("ConfigError", "P*K must equal batch_size");

    const auto lmap = label_map(subjects);
    std::vector<int> train_labels;
    for (const auto& s : train_set) {
        auto it = lmap.find(s.subject_id);
        if (it == lmap.end()) fail("ConfigError", "segment subject not in label universe: " + s.subject_id);
        train_labels.push_back(it->second);
    }

    Rng batch_rng(tcfg.seed * 0x2545f4914f6cdd1dull + 1);
    OptimState state;
    state.lr = tcfg.lr;

    FitResult res;
    res.best_val_loss = std::numeric_limits<double>::infinity();

    const int n_batches =
        static_cast<int>((train_set.size() + tcfg.batch_size - 1) / tcfg.batch_size);

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        const double lr_used = state.lr;
        double train_loss = 0.0;
        for (int b = 0; b < n_batches; ++b) {
            const auto idxs =
                balanced_batch(train_labels, tcfg.classes_per_batch, tcfg.samples_per_class, batch_rng);

            // mixed-length batches forward per length group, then concatenate
            std::map<size_t, std::vector<size_t>> by_len;
            for (size_t i : idxs) by_len[train_set[i].samples.size()].push_back(i);

            Tape tape;
            model.params().watch_all(tape);
            std::vector<Tensor> embs, lgts;
            std::vector<int> labels;
            for (const auto& [len, group] : by_len) {
                std::vector<const Segment*> ptrs;
                for (size_t i : group) {
                    ptrs.push_back(&train_set[i]);
                    labels.push_back(train_labels[i]);
                }
                Tensor x = stack_segments(ptrs);
                Tensor e = model.embed(&tape, x, /*train=*/true);
                embs.push_back(e);
                lgts.push_back(model.classify(&tape, e));
            }
            Tensor emb = embs.size() == 1 ? embs[0] : concat_rows(&tape, embs);
            Tensor logits = lgts.size() == 1 ? lgts[0] : concat_rows(&tape, lgts);
            Tensor loss = total_loss(&tape, logits, emb, labels, lcfg);
            train_loss += loss.value();

            tape.backward(loss);
            model.params().collect_grads(tape);
            adam_step(model.params(), state, tcfg.adam);
        }
        train_loss /= n_batches;

        // validation metrics in eval mode over the whole set
        double val_loss = 0.0, val_acc = 0.0;
        if (!val_set.empty()) {
            EmbeddedSet ev = embed_set(model, val_set, subjects);
            val_loss = total_loss(nullptr, ev.logits, ev.embeddings, ev.labels, lcfg).value();
            const auto pred = argmax_rows(ev.logits);
            int hit = 0;
            for (size_t i = 0; i < pred.size(); ++i)
                if (pred[i] == ev.labels[i]) ++hit;
            val_acc = static_cast<double>(hit) / pred.size();
        }

        res.history.push_back({epoch, train_loss, val_loss, val_acc, lr_used});

        if (val_loss < res.best_val_loss || res.best_epoch == 0) {
            res.best_val_loss = val_loss;
            res.best_val_acc = val_acc;
            res.best_epoch = epoch;
            if (!out_dir.empty()) {
                json meta;
                meta["epoch"] = epoch;
                meta["val_loss"] = val_loss;
                meta["val_acc"] = val_acc;
                meta["subjects"] = subjects;
                meta["seed"] = tcfg.seed;
                save_checkpoint(model, meta, out_dir);
            }
        }
        plateau_update(state, tcfg.plateau, val_loss);
    }

    if (!out_dir.empty()) write_history_csv(res.history, out_dir / "history.csv");
    return res;
}

// ---- Checkpoints -------------------------------------------------------------

void save_checkpoint(const Model& model, const json& metadata, const fs::path& dir) {
    fs::create_directories(dir);
    const ParamStore& store = model.params();

    json manifest;
    manifest["format"] = "crossecg-checkpoint";
    manifest["version"] = 1;
    manifest["dtype"] = "f64";
    manifest["model"] = model_config_to_json(model.config());
    manifest["metadata"] = metadata;
    manifest["tensors"] = json::array();

    std::ofstream bin(dir / "checkpoint.bin", std::ios::binary | std::ios::trunc);
    if (!bin) fail("IoFailure", "cannot write checkpoint.bin in " + dir.string());
    auto dump = [&](const std::string& name, const Tensor& t, const char* kind) {
        json e;
        e["name"] = name;
        e["kind"] = kind;
        e["shape"] = t.shape;
        manifest["tensors"].push_back(e);
        bin.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(sizeof(double) * t.vec().size()));
    };
    auto& mutable_store = const_cast<ParamStore&>(store);
    for (const auto& name : store.param_names()) dump(name, mutable_store.param(name), "param");
    for (const auto& name : store.buffer_names()) dump(name, mutable_store.buffer(name), "buffer");
    if (!bin) fail("IoFailure", "short write on checkpoint.bin");

    std::ofstream out(dir / "checkpoint.json");
    if (!out) fail("IoFailure", "cannot write checkpoint.json in " + dir.string());
    out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path jpath = dir / "checkpoint.json";
    const fs::path bpath = dir / "checkpoint.bin";
    if (!fs::exists(jpath) || !fs::exists(bpath))
        fail("MissingFile", "no checkpoint under " + dir.string());

    Checkpoint ck;
    {
        std::ifstream in(jpath);
        try {
            in >> ck.manifest;
        } catch (const json::exception& e) {
            fail("MalformedHeader", jpath.string() + ": " + e.what());
        }
    }
    if (ck.manifest.value("dtype", "") != "f64")
        fail("MalformedHeader", "unsupported checkpoint dtype");
    ck.config = model_config_from_json(ck.manifest.at("model"));
    ck.metadata = ck.manifest.value("metadata", json::object());

    std::ifstream bin(bpath, std::ios::binary);
    bin.seekg(0, std::ios::end);
    const auto bytes = bin.tellg();
    bin.seekg(0);
    ck.payload.resize(static_cast<size_t>(bytes) / sizeof(double));
    bin.read(reinterpret_cast<char*>(ck.payload.data()), bytes);
    if (!bin) fail("LengthMismatch", "checkpoint payload read failed");
    return ck;
}

Model Checkpoint::restore() const {
    Model model(config, /*init_seed=*/0);
    size_t off = 0;
    for (const auto& e : manifest.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::string kind = e.at("kind").get<std::string>();
        const auto shape = e.at("shape").get<std::vector<int>>();
        Tensor& dst = kind == "param" ? model.params().param(name) : model.params().buffer(name);
        if (dst.shape != shape)
            fail("ShapeMismatch", "checkpoint tensor " + name + " has shape " + shape_str(shape) +
                                      ", model expects " + shape_str(dst.shape));
        if (off + dst.vec().size() > payload.size())
            fail("LengthMismatch", "checkpoint payload shorter than manifest");
        std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(off), dst.vec().size(),
                    dst.vec().begin());
        off += dst.vec().size();
    }
    if (off != payload.size()) fail("LengthMismatch", "checkpoint payload longer than manifest");
    return model;
}

} // namespace crossecg
