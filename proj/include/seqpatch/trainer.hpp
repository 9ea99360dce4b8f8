#pragma once

#include "json.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seqpatch/adam.hpp"
#include "seqpatch/metrics.hpp"
#include "seqpatch/ray_pipeline.hpp"
#include "seqpatch/seg_net.hpp"
#include "seqpatch/volume_io.hpp"

namespace seqpatch {

/// Process CPU time in seconds (all threads).
inline double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

struct SegmentResult {
    Mask mask;
    LikelihoodMap likelihood;
};

/// Click-to-mask on one slice: normalize, cast rays, run every sequence, fuse, threshold.
/// `geometry.center` is replaced by `click`.
inline SegmentResult segment_slice(const ModelParams<float>& params, const Image& slice, Point click,
                                   ExtractionConfig geometry)
{
    geometry.center = click;
    geometry.patch_size = params.config.patch_size;
    const auto seqs = extract_sequences(normalize_intensity(slice), nullptr, geometry);
    NoGradGuard no_grad;
    const Tensor<float> probs = forward_batch(params, Tensor<float>(batch_patches(seqs, false)), geometry.seq_len);
    SegmentResult r;
    r.likelihood = fuse(unbatch_predictions(probs.value(), seqs), slice.dim(0), slice.dim(1));
    r.mask = threshold(r.likelihood);
    return r;
}

struct TrainConfig {
    std::string variant = "full";
    std::size_t base_channels = 16;
    std::size_t epochs = 10;
    /// Sequences per optimizer step; 0 means all rays of one slice.
    std::size_t sequences_per_batch = 0;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 7;
    ExtractionConfig extraction;
    std::string checkpoint_dir = "checkpoints";
    /// Stop once this much process CPU time has been spent (0 = unlimited).
    double cpu_budget_seconds = 0.0;
    /// Held-out slices scored after each epoch (0 = all).
    std::size_t max_validation_slices = 0;
    /// Stop after this many optimizer steps in total (0 = unlimited).
    std::size_t max_steps = 0;

    void validate() const
    {
        if (epochs < 1)
            throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (learning_rate < 0.0 || weight_decay < 0.0)
            throw std::invalid_argument("TrainConfig: learning_rate and weight_decay must be non-negative");
        build_variant(variant, base_channels);
        extraction.validate();
    }

    NetConfig net() const
    {
        NetConfig c = build_variant(variant, base_channels);
        c.patch_size = extraction.patch_size;
        c.validate();
        return c;
    }
};

inline nlohmann::json to_json(const ExtractionConfig& e)
{
    return {{"num_rays", e.num_rays}, {"stride", e.stride}, {"patch_size", e.patch_size}, {"seq_len", e.seq_len}};
}

inline ExtractionConfig extraction_from_json(const nlohmann::json& j, ExtractionConfig e = {})
{
    e.num_rays = j.value("num_rays", e.num_rays);
    e.stride = j.value("stride", e.stride);
    e.patch_size = j.value("patch_size", e.patch_size);
    e.seq_len = j.value("seq_len", e.seq_len);
    e.validate();
    return e;
}

inline nlohmann::json to_json(const TrainConfig& c)
{
    return {{"variant", c.variant},
            {"base_channels", c.base_channels},
            {"epochs", c.epochs},
            {"sequences_per_batch", c.sequences_per_batch},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"seed", c.seed},
            {"extraction", to_json(c.extraction)},
            {"checkpoint_dir", c.checkpoint_dir},
            {"cpu_budget_seconds", c.cpu_budget_seconds},
            {"max_validation_slices", c.max_validation_slices},
            {"max_steps", c.max_steps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    c.variant = j.value("variant", c.variant);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.epochs = j.value("epochs", c.epochs);
    c.sequences_per_batch = j.value("sequences_per_batch", c.sequences_per_batch);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    if (j.contains("extraction"))
        c.extraction = extraction_from_json(j.at("extraction"));
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.cpu_budget_seconds = j.value("cpu_budget_seconds", c.cpu_budget_seconds);
    c.max_validation_slices = j.value("max_validation_slices", c.max_validation_slices);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.validate();
    return c;
}

/// One labelled slice with the click used for it.
struct LabelledSlice {
    std::string volume_id;
    std::size_t slice_index = 0;
    Image image;
    Mask mask;
    Point center;
};

/// Slices of the given split whose mask is nonempty; the click is the mask's mass center
/// unless the manifest overrides it.
inline std::vector<LabelledSlice> labelled_slices(const Manifest& m, const std::string& split)
{
    std::vector<LabelledSlice> out;
    for (const ManifestEntry* e : m.split(split)) {
        if (!e->mask_path)
            throw DataError("volume '" + e->id + "' has no mask");
        const Volume v = m.load(*e);
        for (std::size_t k = 0; k < v.depth(); ++k) {
            Mask mask = v.mask_slice(k);
            if (count_foreground({mask.values().begin(), mask.values().end()}) == 0)
                continue;
            const auto it = e->center_overrides.find(k);
            const Point c = it != e->center_overrides.end() ? it->second : training_center(mask);
            out.push_back({e->id, k, v.slice(k), std::move(mask), c});
        }
    }
    return out;
}

/// Mean slice DSC with mass-center clicks.
inline double mean_dsc(const ModelParams<float>& params, const std::vector<LabelledSlice>& slices,
                       const ExtractionConfig& geometry, std::size_t limit = 0)
{
    const std::size_t n = limit ? std::min(limit, slices.size()) : slices.size();
    if (n == 0)
        throw std::invalid_argument("mean_dsc: no slices");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        total += dsc(segment_slice(params, slices[i].image, slices[i].center, geometry).mask, slices[i].mask);
    return total / static_cast<double>(n);
}

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    std::optional<double> val_dsc;
    std::size_t steps = 0;
    double cpu_seconds = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e)
{
    return {{"epoch", e.epoch},
            {"loss", e.loss},
            {"val_dsc", e.val_dsc ? nlohmann::json(*e.val_dsc) : nlohmann::json(nullptr)},
            {"steps", e.steps},
            {"cpu_seconds", e.cpu_seconds}};
}

struct TrainResult {
    std::vector<EpochLog> epochs;
    ModelParams<float> last;
    std::optional<ModelParams<float>> best;
    double best_dsc = -1.0;
    bool budget_exhausted = false;
    std::size_t total_steps = 0;
};

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
    /// Called after every optimizer step with (epoch, step in epoch, batch loss).
    std::function<void(std::size_t, std::size_t, double)> on_step;
};

/// Deterministic training loop. Checkpoints (last.rpsm, best.rpsm) and metrics.jsonl are
/// written to cfg.checkpoint_dir when it is nonempty.
inline TrainResult train(const TrainConfig& cfg, const std::vector<LabelledSlice>& train_set,
                         const std::vector<LabelledSlice>& val_set, const TrainHooks& hooks = {})
{
    cfg.validate();
    if (train_set.empty())
        throw DataError("train: no training slices with nonempty masks");
    const double cpu_start = cpu_seconds();
    std::filesystem::path dir(cfg.checkpoint_dir);
    std::ofstream log;
    if (!cfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(dir);
        log.open(dir / "metrics.jsonl", std::ios::trunc);
        if (!log)
            throw DataError("cannot write " + (dir / "metrics.jsonl").string());
    }

    TrainResult result{{}, ModelParams<float>::create(cfg.net(), cfg.seed), std::nullopt};
    auto params = result.last.parameters();
    AdamState<float> adam({cfg.learning_rate, 0.95, 0.99, 1e-8, cfg.weight_decay});
    Rng order_rng(cfg.seed ^ 0x5eed0fULL);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    ExtractionConfig geom = cfg.extraction;
    const std::size_t per_batch = cfg.sequences_per_batch ? cfg.sequences_per_batch : geom.num_rays;

    for (std::size_t epoch = 1; epoch <= cfg.epochs && !result.budget_exhausted; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        EpochLog entry;
        entry.epoch = epoch;
        double loss_sum = 0.0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            if ((cfg.cpu_budget_seconds > 0.0 && cpu_seconds() - cpu_start >= cfg.cpu_budget_seconds)
                || (cfg.max_steps && result.total_steps >= cfg.max_steps)) {
                result.budget_exhausted = true;
                break;
            }
            const LabelledSlice& s = train_set[order[oi]];
            geom.center = s.center;
            const auto seqs = extract_sequences(normalize_intensity(s.image), &s.mask, geom);
            for (std::size_t first = 0; first < seqs.size(); first += per_batch) {
                const std::vector<PatchSequence> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(first),
                                                       seqs.begin()
                                                           + static_cast<std::ptrdiff_t>(
                                                               std::min(first + per_batch, seqs.size())));
                result.last.zero_grad();
                const Tensor<float> pred =
                    forward_batch(result.last, Tensor<float>(batch_patches(chunk, false)), geom.seq_len);
                Tensor<float> loss = bce(pred, batch_patches(chunk, true));
                const double value = loss.value()[0];
                if (!std::isfinite(value))
                    throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch "
                                       + std::to_string(entry.steps) + " (volume '" + s.volume_id + "', slice "
                                       + std::to_string(s.slice_index) + ", rays " + std::to_string(first) + "-"
                                       + std::to_string(first + chunk.size() - 1) + ")");
                loss.backward();
                adam_step(params, adam);
                loss_sum += value;
                ++entry.steps;
                ++result.total_steps;
                if (hooks.on_step)
                    hooks.on_step(epoch, entry.steps, value);
            }
        }
        if (entry.steps == 0)
            break;
        entry.loss = loss_sum / static_cast<double>(entry.steps);
        if (!val_set.empty()) {
            entry.val_dsc = mean_dsc(result.last, val_set, cfg.extraction, cfg.max_validation_slices);
            if (*entry.val_dsc > result.best_dsc) {
                result.best_dsc = *entry.val_dsc;
                result.best = result.last.cast<float>();
                if (log.is_open())
                    save_checkpoint(*result.best, (dir / "best.rpsm").string());
            }
        }
        entry.cpu_seconds = cpu_seconds() - cpu_start;
        if (log.is_open()) {
            save_checkpoint(result.last, (dir / "last.rpsm").string());
            log << to_json(entry).dump() << '\n' << std::flush;
        }
        result.epochs.push_back(entry);
        if (hooks.on_epoch)
            hooks.on_epoch(entry);
    }
    return result;
}

inline TrainResult train(const TrainConfig& cfg, const Manifest& manifest, const TrainHooks& hooks = {})
{
    return train(cfg, labelled_slices(manifest, "train"), labelled_slices(manifest, "test"), hooks);
}

/// Loads a checkpoint and segments one slice of `volume` from `click`.
inline SegmentResult infer(const std::string& checkpoint, const Volume& volume, std::size_t slice_index, Point click,
                           const ExtractionConfig& geometry = {})
{
    if (!std::filesystem::exists(checkpoint))
        throw DataError("checkpoint not found: " + checkpoint);
    const auto params = load_checkpoint(checkpoint);
    return segment_slice(params, volume.slice(slice_index), click, geometry);
}

} // namespace seqpatch
