// SPDX-License-Identifier: Apache-2.0
//
// Model directory format: model.json (config plus one record per tensor with
// its byte offset) next to model.bin, the tensors as little-endian float64,
// row-major, in manifest order.
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "slicelab/transformer.hpp"

namespace slicelab {

struct SliceInfo {
    double s = 0.0;
    std::size_t d_kept = 0;
    std::string mode;
    bool operator==(const SliceInfo&) const = default;
};

struct StoredModel {
    ModelWeights weights;
    ModelConfig config;
    std::optional<SliceInfo> slice;
};

inline constexpr const char* kManifestName = "model.json";
inline constexpr const char* kBlobName = "model.bin";
inline constexpr const char* kVocabName = "vocab.json";

void save_model(const std::filesystem::path& dir, const ModelWeights& weights, const ModelConfig& config,
                const std::optional<SliceInfo>& slice = std::nullopt);
StoredModel load_model(const std::filesystem::path& dir);

}  // namespace slicelab
