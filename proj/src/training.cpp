#include "planesam/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "planesam/config.hpp"
#include "planesam/errors.hpp"

namespace planesam {

namespace fs = std::filesystem;
using json = nlohmann::json;

TrainConfig TrainConfig::pretrain_defaults() {
    TrainConfig cfg;
    cfg.phase = Phase::pretrain;
    cfg.epochs = 40;
    return cfg;
}

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig cfg;
    cfg.phase = Phase::finetune;
    cfg.epochs = 15;
    cfg.noise_frac = 0.1f;
    cfg.flip_prob = 0.5f;
    cfg.min_mask_area = 0;
    return cfg;
}

void TrainConfig::validate() const {
    if (epochs <= 0) throw ConfigError("train.epochs must be positive");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must be in [0, 1)");
    if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
    if (!(noise_frac >= 0.0f && noise_frac < 0.5f)) throw ConfigError("train.noise_frac must be in [0, 0.5)");
    if (!(flip_prob >= 0.0f && flip_prob <= 1.0f)) throw ConfigError("train.flip_prob must be in [0, 1]");
    if (min_mask_area && *min_mask_area < 0) throw ConfigError("train.min_mask_area must be >= 0");
    loss.validate();
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
    if (total_steps <= 0) throw ConfigError("total_steps must be positive");
    if (step < 0 || step > total_steps) throw ConfigError("step outside [0, total_steps]");
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

TrainableSet apply_freeze_policy(nn::ParameterStore& store, const FreezePolicy& policy) {
    TrainableSet set;
    for (const auto& p : store.parameters()) {
        auto starts = [&](const char* prefix) { return p.name.rfind(prefix, 0) == 0; };
        bool trainable;
        if (starts("transformer.")) {
            trainable = !policy.transformer_branch;
        } else if (starts("cnn.") || starts("stem.")) {
            trainable = true;
        } else if (starts("prompt.")) {
            trainable = !policy.prompt_encoder;
        } else if (starts("decoder.iou_head.")) {
            trainable = !policy.iou_head;
        } else if (starts("decoder.")) {
            trainable = true;
        } else {
            throw ConfigError("parameter " + p.name + " belongs to no known group");
        }
        if (p.buffer) trainable = false;
        p.var->requires_grad = trainable;
        if (!trainable) p.var->grad = Tensor();
        (trainable ? set.trainable : set.frozen).push_back(p.name);
    }
    return set;
}

double global_grad_norm(const nn::ParameterStore& store) {
    double sq = 0.0;
    for (const auto& p : store.parameters()) {
        if (!p.var->has_grad()) continue;
        for (float g : p.var->grad.storage()) sq += static_cast<double>(g) * g;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(nn::ParameterStore& store, double max_norm) {
    const double norm = global_grad_norm(store);
    const double coef = max_norm / (norm + 1e-6);
    if (std::isfinite(norm) && coef < 1.0) {
        for (const auto& p : store.parameters()) {
            if (!p.var->has_grad()) continue;
            for (float& g : p.var->grad.storage()) g = static_cast<float>(g * coef);
        }
    }
    return norm;
}

Optimizer::Optimizer(const TrainConfig& cfg, const nn::ParameterStore& store)
    : kind_(cfg.optimizer),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      momentum_(cfg.momentum),
      weight_decay_(cfg.weight_decay) {
    for (const auto& p : store.parameters()) slots_.push_back({p.name, 0, Tensor(), Tensor()});
}

void Optimizer::step(nn::ParameterStore& store, double lr) {
    const auto& params = store.parameters();
    if (params.size() != slots_.size()) throw ConfigError("optimizer was built for a different model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& var = *params[i].var;
        if (!var.requires_grad || !var.has_grad()) continue;
        auto& slot = slots_[i];
        const std::size_t n = var.value.numel();
        float* w = var.value.data();
        const float* g = var.grad.data();
        ++slot.steps;
        if (kind_ == OptimizerKind::adam) {
            if (slot.m.empty()) {
                slot.m = Tensor::zeros_like(var.value);
                slot.v = Tensor::zeros_like(var.value);
            }
            float* m = slot.m.data();
            float* v = slot.v.data();
            const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.steps));
            const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.steps));
            const double step_size = lr / bc1;
            const double sqrt_bc2 = std::sqrt(bc2);
            const double shrink = 1.0 - lr * weight_decay_;
            for (std::size_t k = 0; k < n; ++k) {
                const double gk = g[k];
                m[k] = static_cast<float>(beta1_ * m[k] + (1.0 - beta1_) * gk);
                v[k] = static_cast<float>(beta2_ * v[k] + (1.0 - beta2_) * gk * gk);
                const double denom = std::sqrt(static_cast<double>(v[k])) / sqrt_bc2 + eps_;
                w[k] = static_cast<float>(w[k] * shrink - step_size * m[k] / denom);
            }
        } else {
            const bool first = slot.m.empty();
            if (first) slot.m = Tensor::zeros_like(var.value);
            float* buf = slot.m.data();
            for (std::size_t k = 0; k < n; ++k) {
                const double gk = static_cast<double>(g[k]) + weight_decay_ * w[k];
                const double b = first ? gk : momentum_ * buf[k] + gk;
                buf[k] = static_cast<float>(b);
                w[k] = static_cast<float>(w[k] - lr * b);
            }
        }
    }
}

Trainer::Trainer(PlaneSamModel& model, const TrainConfig& cfg, std::int64_t total_steps)
    : model_(model),
      cfg_((cfg.validate(), cfg)),
      total_steps_(total_steps),
      rng_(cfg.seed),
      trainable_(apply_freeze_policy(model.store(), cfg.freeze)),
      optimizer_(cfg, model.store()) {
    if (total_steps <= 0) throw ConfigError("training needs at least one step");
}

void Trainer::maybe_flip(Prompted& p) {
    if (cfg_.flip_prob <= 0.0f) return;
    std::bernoulli_distribution coin(cfg_.flip_prob);
    if (!coin(rng_)) return;
    auto [flipped, boxes] = horizontal_flip(*p.sample, {p.box});
    p.flipped = std::move(flipped);
    p.use_flipped = true;
    p.box = boxes.front();
    p.mask = flip_mask(p.mask);
    ++counters_.flips;
}

StepReport Trainer::run(std::vector<Prompted>& prompts, int skipped) {
    StepReport report;
    report.lr = current_lr();
    report.skipped = skipped;
    auto& store = model_.store();
    store.zero_grad();
    const int n = static_cast<int>(prompts.size());
    double total = 0.0;
    for (auto& p : prompts) {
        const RgbdSample& sample = p.use_flipped ? p.flipped : *p.sample;
        auto embedding = model_.embed(sample);
        auto triplet = model_.decode(embedding, p.box);
        auto target = mask_target(p.mask);
        auto r = min_of_three(triplet.logits, triplet.iou_scores, target, cfg_.loss);
        const double loss = r.candidate_losses[static_cast<std::size_t>(r.index)];
        if (!std::isfinite(loss)) {
            throw NumericFault("non-finite loss at step " + std::to_string(step_) + " on sample " + sample.id);
        }
        ag::backward(ag::scale(r.loss, 1.0f / static_cast<float>(n)));
        total += loss;
        report.chosen.push_back(r.index);
        report.prompts.push_back(p.box);
    }
    counters_.prompts += n;
    report.used = n;
    if (n > 0) {
        report.loss = total / n;
        report.grad_norm = clip_grad_norm(store, cfg_.clip_norm);
        if (!std::isfinite(report.grad_norm)) {
            throw NumericFault("non-finite gradient norm at step " + std::to_string(step_));
        }
        optimizer_.step(store, report.lr);
        store.zero_grad();
        for (const auto& p : store.parameters()) {
            if (p.var->requires_grad && !p.var->value.all_finite()) {
                throw NumericFault("parameter " + p.name + " became non-finite at step " + std::to_string(step_));
            }
        }
    }
    if (step_ < total_steps_) ++step_;
    return report;
}

StepReport Trainer::pretrain_step(const std::vector<PretrainItem>& batch) {
    std::vector<Prompted> prompts;
    int skipped = 0;
    for (const auto& item : batch) {
        const auto& s = item.sample;
        const std::int64_t min_area = cfg_.min_mask_area.value_or(default_min_mask_area(s.rgb.height, s.rgb.width));
        auto kept = filter_small_masks(item.labels, min_area);
        counters_.masks_filtered += static_cast<std::int64_t>(item.labels.masks.size() - kept.masks.size());
        if (kept.masks.empty()) {
            ++skipped;
            ++counters_.skipped;
            continue;
        }
        auto target = sample_pretrain_target(kept, rng_);
        Prompted p{&s, {}, false, std::move(target.mask), target.box};
        if (cfg_.noise_frac > 0.0f) {
            p.box = jitter_box(p.box, cfg_.noise_frac, rng_, s.rgb.width, s.rgb.height);
            ++counters_.prompts_jittered;
        }
        maybe_flip(p);
        prompts.push_back(std::move(p));
    }
    return run(prompts, skipped);
}

StepReport Trainer::finetune_step(const std::vector<RgbdSample>& batch) {
    std::vector<Prompted> prompts;
    int skipped = 0;
    for (const auto& s : batch) {
        const auto planes = s.annotation ? s.annotation->plane_indices() : std::vector<std::size_t>{};
        if (planes.empty()) {
            ++skipped;
            ++counters_.skipped;
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick(0, planes.size() - 1);
        const auto& mask = s.annotation->masks[planes[pick(rng_)]];
        Prompted p{&s, {}, false, mask, tight_box(mask)};
        if (cfg_.noise_frac > 0.0f) {
            p.box = jitter_box(p.box, cfg_.noise_frac, rng_, s.rgb.width, s.rgb.height);
            ++counters_.prompts_jittered;
        }
        maybe_flip(p);
        prompts.push_back(std::move(p));
    }
    return run(prompts, skipped);
}

std::int64_t steps_per_epoch(std::size_t samples, int batch_size) {
    if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
    return static_cast<std::int64_t>((samples + static_cast<std::size_t>(batch_size) - 1) / batch_size);
}

namespace {

template <class StepFn>
std::vector<EpochLog> train_loop(Trainer& trainer, std::size_t n, int epochs,
                                 const std::optional<fs::path>& log_path, const EpochCallback& callback,
                                 StepFn&& step) {
    if (n == 0) throw DataError("training set is empty");
    const int batch = trainer.config().batch_size;
    const std::int64_t spe = steps_per_epoch(n, batch);
    std::ofstream log;
    if (log_path) {
        log.open(*log_path, std::ios::app);
        if (!log) throw LoadError("cannot open training log " + log_path->string());
    }
    std::vector<EpochLog> logs;
    std::vector<std::size_t> order(n);
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), trainer.rng());
        EpochLog row;
        row.epoch = static_cast<int>(trainer.step() / spe) + 1;
        double sum = 0.0;
        std::int64_t used = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch));
            std::vector<std::size_t> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
            auto report = step(idx);
            sum += report.loss * report.used;
            used += report.used;
            row.skipped += report.skipped;
            row.lr = report.lr;
        }
        row.mean_loss = used > 0 ? sum / static_cast<double>(used) : 0.0;
        logs.push_back(row);
        if (log) {
            json j = {{"epoch", row.epoch}, {"mean_loss", row.mean_loss}, {"lr", row.lr}, {"skipped", row.skipped}};
            log << j.dump() << '\n' << std::flush;
        }
        if (callback && !callback(row)) break;
    }
    return logs;
}

}  // namespace

std::vector<EpochLog> train_pretrain(Trainer& trainer, const std::vector<PretrainItem>& data, int epochs,
                                     const std::optional<fs::path>& log_path, const EpochCallback& callback) {
    return train_loop(trainer, data.size(), epochs, log_path, callback, [&](const std::vector<std::size_t>& idx) {
        std::vector<PretrainItem> batch;
        for (auto i : idx) batch.push_back(data[i]);
        return trainer.pretrain_step(batch);
    });
}

std::vector<EpochLog> train_finetune(Trainer& trainer, const std::vector<RgbdSample>& data, int epochs,
                                     const std::optional<fs::path>& log_path, const EpochCallback& callback) {
    return train_loop(trainer, data.size(), epochs, log_path, callback, [&](const std::vector<std::size_t>& idx) {
        std::vector<RgbdSample> batch;
        for (auto i : idx) batch.push_back(data[i]);
        return trainer.finetune_step(batch);
    });
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'S', 'A', 'M', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ull;
    return h;
}

class Writer {
public:
    template <class T>
    void pod(const T& v) {
        out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        out_.append(s);
    }
    void tensor(const Tensor& t) {
        pod<std::uint8_t>(t.empty() ? 0 : 1);
        if (t.empty()) return;
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) pod<std::int32_t>(d);
        out_.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
    }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : in_(bytes) {}
    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor tensor() {
        if (pod<std::uint8_t>() == 0) return Tensor();
        const auto rank = pod<std::uint32_t>();
        if (rank > 8) throw CheckpointError("checkpoint tensor rank is implausible");
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = pod<std::int32_t>();
            if (d <= 0) throw CheckpointError("checkpoint tensor has a non-positive dimension");
            shape.push_back(d);
        }
        const std::size_t n = shape_numel(shape);
        need(n * sizeof(float));
        std::vector<float> data(n);
        std::memcpy(data.data(), in_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
        return Tensor(std::move(shape), std::move(data));
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (n > in_.size() - pos_) throw CheckpointError("checkpoint payload is truncated");
    }
    const std::string& in_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const fs::path& path, const PlaneSamModel& model, const Trainer* trainer,
                     const TrainConfig& cfg) {
    Writer w;
    json conf = {{"model", model_config_to_json(model.config())}, {"train", train_config_to_json(cfg)}};
    w.str(conf.dump());
    w.pod<std::int64_t>(trainer ? trainer->step() : 0);
    w.pod<std::int64_t>(trainer ? trainer->total_steps() : 0);
    std::ostringstream rng_state;
    if (trainer) rng_state << const_cast<Trainer*>(trainer)->rng();
    w.str(rng_state.str());
    const auto& params = model.store().parameters();
    w.pod<std::uint64_t>(params.size());
    for (const auto& p : params) {
        w.str(p.name);
        w.tensor(p.var->value);
    }
    w.pod<std::uint8_t>(trainer ? 1 : 0);
    if (trainer) {
        auto& opt = const_cast<Trainer*>(trainer)->optimizer();
        w.pod<std::uint8_t>(opt.kind() == OptimizerKind::adam ? 0 : 1);
        w.pod<std::uint64_t>(opt.slots().size());
        for (const auto& s : opt.slots()) {
            w.str(s.name);
            w.pod<std::int64_t>(s.steps);
            w.tensor(s.m);
            w.tensor(s.v);
        }
    }

    const fs::path partial = fs::path(path.string() + ".partial");
    {
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) throw LoadError("cannot write checkpoint " + partial.string());
        out.write(kMagic, sizeof(kMagic));
        const std::uint32_t version = kCheckpointVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::uint64_t size = w.bytes().size();
        out.write(reinterpret_cast<const char*>(&size), sizeof(size));
        out.write(w.bytes().data(), static_cast<std::streamsize>(size));
        const std::uint64_t sum = fnv1a(w.bytes());
        out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
        if (!out) throw LoadError("short write on checkpoint " + partial.string());
    }
    fs::rename(partial, path);
}

CheckpointState read_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (file.size() < header) throw CheckpointError("checkpoint " + path.string() + " is truncated");
    if (std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint");
    }
    std::uint32_t version;
    std::memcpy(&version, file.data() + sizeof(kMagic), sizeof(version));
    if (version != kCheckpointVersion) {
        throw CheckpointError("incompatible checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    std::uint64_t size;
    std::memcpy(&size, file.data() + sizeof(kMagic) + sizeof(version), sizeof(size));
    if (file.size() - header < size || file.size() - header - size < sizeof(std::uint64_t)) {
        throw CheckpointError("checkpoint " + path.string() + " is truncated");
    }
    const std::string payload = file.substr(header, size);
    std::uint64_t sum;
    std::memcpy(&sum, file.data() + header + size, sizeof(sum));
    if (sum != fnv1a(payload)) throw CheckpointError("checkpoint " + path.string() + " failed its checksum");

    CheckpointState st;
    Reader r(payload);
    try {
        auto conf = json::parse(r.str());
        st.model = model_config_from_json(conf.at("model"));
        st.train = train_config_from_json(conf.at("train"));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint config is unreadable: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
    }
    st.step = r.pod<std::int64_t>();
    st.total_steps = r.pod<std::int64_t>();
    st.rng_state = r.str();
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        auto name = r.str();
        st.parameters.emplace_back(std::move(name), r.tensor());
    }
    st.has_optimizer = r.pod<std::uint8_t>() != 0;
    if (st.has_optimizer) {
        st.optimizer = r.pod<std::uint8_t>() == 0 ? OptimizerKind::adam : OptimizerKind::sgd;
        const auto slots = r.pod<std::uint64_t>();
        for (std::uint64_t i = 0; i < slots; ++i) {
            Optimizer::Slot s;
            s.name = r.str();
            s.steps = r.pod<std::int64_t>();
            s.m = r.tensor();
            s.v = r.tensor();
            st.slots.push_back(std::move(s));
        }
    }
    if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
    return st;
}

void restore_parameters(PlaneSamModel& model, const CheckpointState& state) {
    const auto& params = model.store().parameters();
    if (params.size() != state.parameters.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(state.parameters.size()) + " tensors, model has " +
                              std::to_string(params.size()));
    }
    for (const auto& p : params) {
        auto it = std::find_if(state.parameters.begin(), state.parameters.end(),
                               [&](const auto& kv) { return kv.first == p.name; });
        if (it == state.parameters.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
        if (!it->second.same_shape(p.var->value)) {
            throw CheckpointError("shape mismatch for " + p.name + ": " + it->second.shape_string() + " vs " +
                                  p.var->value.shape_string());
        }
        p.var->value = it->second;
    }
}

void restore_trainer(Trainer& trainer, const CheckpointState& state) {
    if (!state.has_optimizer) throw CheckpointError("checkpoint carries no optimizer state");
    if (state.optimizer != trainer.optimizer().kind()) throw CheckpointError("checkpoint optimizer kind differs");
    auto& slots = trainer.optimizer().slots();
    if (slots.size() != state.slots.size()) throw CheckpointError("optimizer state size differs");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].name != state.slots[i].name) throw CheckpointError("optimizer state order differs");
        slots[i] = state.slots[i];
    }
    if (state.step < 0 || state.step > trainer.total_steps()) throw CheckpointError("stored step is out of range");
    trainer.set_step(state.step);
    std::istringstream is(state.rng_state);
    is >> trainer.rng();
    if (!is) throw CheckpointError("stored rng state is unreadable");
}

}  // namespace planesam
