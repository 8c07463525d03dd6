// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "slicelab/transformer.hpp"

namespace slicelab {

/// Character-level vocabulary over Unicode code points. Id 0 is reserved for
/// out-of-vocabulary input (stored as U+0000); the observed code points
/// follow in ascending order.
class Vocabulary {
public:
    static Vocabulary from_text(std::string_view utf8);
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const noexcept { return symbols_.size(); }
    const std::vector<char32_t>& symbols() const noexcept { return symbols_; }

    /// Unknown code points map to id 0; `unknown_count` receives how many.
    TokenSeq encode(std::string_view utf8, std::size_t* unknown_count = nullptr) const;
    std::string decode(std::span<const TokenId> tokens) const;

private:
    std::vector<char32_t> symbols_;
};

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(std::span<const char32_t> code_points);

/// Reads a whole file; ValidationError if it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);

}  // namespace slicelab
