// SPDX-License-Identifier: Apache-2.0
#include "slicelab/model_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "slicelab/error.hpp"
#include "slicelab/vocab.hpp"

namespace slicelab {

using nlohmann::json;

namespace {

void put_f64(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        out += static_cast<char>(bits & 0xFF);
        bits >>= 8;
    }
}

double get_f64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    return std::bit_cast<double>(bits);
}

json config_to_json(const ModelConfig& c) {
    json j;
    j["d"] = c.d;
    j["m"] = c.m;
    j["heads"] = c.n_heads;
    j["head_dim"] = c.head_dim;
    j["kv_heads"] = c.n_kv_heads;
    j["blocks"] = c.n_blocks;
    j["vocab"] = c.vocab_size;
    j["max_seq_len"] = c.max_seq_len;
    j["gamma"] = c.gamma;
    j["norm_dim"] = c.norm_dim;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d = j.at("d").get<std::size_t>();
    c.m = j.at("m").get<std::size_t>();
    c.n_heads = j.at("heads").get<std::size_t>();
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.n_kv_heads = j.at("kv_heads").get<std::size_t>();
    c.n_blocks = j.at("blocks").get<std::size_t>();
    c.vocab_size = j.at("vocab").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.gamma = j.at("gamma").get<double>();
    c.norm_dim = j.at("norm_dim").get<std::size_t>();
    return c;
}

ModelWeights skeleton(const ModelConfig& c, std::size_t adapters) {
    ModelWeights w{DenseMatrix(c.vocab_size, c.d), {}, std::vector<double>(c.d, 0.0), DenseMatrix(c.d, c.vocab_size)};
    for (std::size_t i = 0; i < c.n_blocks; ++i) {
        BlockWeights b{std::vector<double>(c.d, 0.0),
                       DenseMatrix(c.d, c.q_width()),
                       DenseMatrix(c.d, c.kv_width()),
                       DenseMatrix(c.d, c.kv_width()),
                       DenseMatrix(c.q_width(), c.d),
                       std::vector<double>(c.d, 0.0),
                       DenseMatrix(c.d, c.m),
                       DenseMatrix(c.d, c.m),
                       DenseMatrix(c.m, c.d),
                       std::nullopt};
        if (i < adapters) b.adapter = DenseMatrix(c.d, c.d);
        w.blocks.push_back(std::move(b));
    }
    return w;
}

}  // namespace

void save_model(const std::filesystem::path& dir, const ModelWeights& weights, const ModelConfig& config,
                const std::optional<SliceInfo>& slice) {
    check_shapes(weights, config);
    std::filesystem::create_directories(dir);

    json manifest;
    manifest["format"] = "slicelab-model";
    manifest["version"] = 1;
    manifest["config"] = config_to_json(config);
    json tensors = json::array();
    std::string blob;
    for (const auto& view : tensor_views(weights)) {
        tensors.push_back({{"name", view.name}, {"rows", view.rows}, {"cols", view.cols}, {"offset", blob.size()}});
        for (double v : view.values) put_f64(blob, v);
    }
    manifest["tensors"] = std::move(tensors);
    if (slice) manifest["sliced"] = {{"s", slice->s}, {"d_kept", slice->d_kept}, {"mode", slice->mode}};

    std::ofstream bin(dir / kBlobName, std::ios::binary | std::ios::trunc);
    if (!bin) throw ValidationError("cannot write " + (dir / kBlobName).string());
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream man(dir / kManifestName, std::ios::binary | std::ios::trunc);
    if (!man) throw ValidationError("cannot write " + (dir / kManifestName).string());
    man << manifest.dump(2) << '\n';
}

StoredModel load_model(const std::filesystem::path& dir) {
    const auto manifest_path = dir / kManifestName;
    json manifest;
    ModelConfig config;
    std::optional<SliceInfo> slice;
    std::size_t adapters = 0;
    try {
        manifest = json::parse(read_text_file(manifest_path));
        config = config_from_json(manifest.at("config"));
        for (const auto& t : manifest.at("tensors")) {
            if (t.at("name").get<std::string>().ends_with(".adapter")) ++adapters;
        }
        if (manifest.contains("sliced")) {
            const auto& s = manifest["sliced"];
            slice = SliceInfo{s.at("s").get<double>(), s.at("d_kept").get<std::size_t>(),
                              s.at("mode").get<std::string>()};
        }
    } catch (const json::exception& e) {
        throw ValidationError("model manifest " + manifest_path.string() + ": " + e.what());
    }
    config.validate(false);
    if (adapters != 0 && adapters != config.n_blocks) {
        throw ValidationError("model manifest: expected 0 or " + std::to_string(config.n_blocks) + " adapters");
    }

    StoredModel out{skeleton(config, adapters), config, slice};
    const std::string blob = read_text_file(dir / kBlobName);
    const auto& records = manifest["tensors"];
    auto views = tensor_views(out.weights);
    if (records.size() != views.size()) {
        throw ValidationError("model manifest lists " + std::to_string(records.size()) + " tensors, expected " +
                              std::to_string(views.size()));
    }
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& rec = records[i];
        auto& view = views[i];
        if (rec.at("name").get<std::string>() != view.name || rec.at("rows").get<std::size_t>() != view.rows ||
            rec.at("cols").get<std::size_t>() != view.cols) {
            throw ValidationError("model manifest: tensor " + std::to_string(i) + " should be " + view.name + " [" +
                                  std::to_string(view.rows) + " x " + std::to_string(view.cols) + "]");
        }
        const std::size_t offset = rec.at("offset").get<std::size_t>();
        if (offset != expected_offset) throw ValidationError("model manifest: bad offset for " + view.name);
        expected_offset += view.values.size() * 8;
        if (expected_offset > blob.size()) throw ValidationError("model blob is truncated at " + view.name);
        const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
        for (std::size_t k = 0; k < view.values.size(); ++k) view.values[k] = get_f64(p + 8 * k);
    }
    if (expected_offset != blob.size()) throw ValidationError("model blob has trailing bytes");
    for (const auto& view : views) {
        if (!all_finite(view.values)) throw NumericalError("model tensor " + view.name + " has non-finite values");
    }
    return out;
}

}  // namespace slicelab
