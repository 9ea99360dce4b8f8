#pragma once

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "seqpatch/png_io.hpp"
#include "seqpatch/ray_pipeline.hpp"

namespace seqpatch {

/// Writes every patch as ray{r}_t{t}.png (and ray{r}_t{t}_label.png) under `dir`, plus
/// sequences.json describing the geometry. Patch intensities are min-max scaled per patch.
inline nlohmann::json export_sequences(const std::string& dir, const std::vector<PatchSequence>& seqs,
                                       const ExtractionConfig& cfg)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json rays = nlohmann::json::array();
    for (const auto& s : seqs) {
        nlohmann::json centers = nlohmann::json::array(), files = nlohmann::json::array(),
                       labels = nlohmann::json::array();
        for (std::size_t t = 0; t < s.patches.size(); ++t) {
            const Image& p = s.patches[t];
            const auto [lo, hi] = std::minmax_element(p.values().begin(), p.values().end());
            std::vector<float> scaled(p.size(), 0.0f);
            if (*hi > *lo)
                for (std::size_t i = 0; i < p.size(); ++i)
                    scaled[i] = (p[i] - *lo) / (*hi - *lo);
            const std::string stem = "ray" + std::to_string(s.ray_index) + "_t" + std::to_string(t);
            write_file((fs::path(dir) / (stem + ".png")).string(),
                       encode_unit_png(scaled.data(), p.dim(1), p.dim(0)));
            files.push_back(stem + ".png");
            if (!s.label_patches.empty()) {
                write_file((fs::path(dir) / (stem + "_label.png")).string(),
                           encode_unit_png(s.label_patches[t].data(), p.dim(1), p.dim(0)));
                labels.push_back(stem + "_label.png");
            }
            centers.push_back({s.patch_centers[t].x, s.patch_centers[t].y});
        }
        nlohmann::json r{{"ray_index", s.ray_index}, {"angle", s.angle}, {"centers", centers}, {"patches", files}};
        if (!labels.empty())
            r["labels"] = labels;
        rays.push_back(r);
    }
    nlohmann::json j{{"center", {cfg.center.x, cfg.center.y}},
                     {"num_rays", cfg.num_rays},
                     {"stride", cfg.stride},
                     {"patch_size", cfg.patch_size},
                     {"seq_len", cfg.seq_len},
                     {"rays", rays}};
    write_file((fs::path(dir) / "sequences.json").string(), j.dump(2));
    return j;
}

} // namespace seqpatch
