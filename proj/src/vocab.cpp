// SPDX-License-Identifier: Apache-2.0
#include "slicelab/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slicelab/error.hpp"

namespace slicelab {

std::vector<char32_t> utf8_decode(std::string_view text) {
    std::vector<char32_t> out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (lead < 0x80) {
            len = 1;
            cp = lead;
        } else if ((lead & 0xE0) == 0xC0) {
            len = 2;
            cp = lead & 0x1F;
        } else if ((lead & 0xF0) == 0xE0) {
            len = 3;
            cp = lead & 0x0F;
        } else if ((lead & 0xF8) == 0xF0) {
            len = 4;
            cp = lead & 0x07;
        } else {
            throw ValidationError("utf8: invalid lead byte at offset " + std::to_string(i));
        }
        if (i + len > text.size()) throw ValidationError("utf8: truncated sequence at offset " + std::to_string(i));
        for (std::size_t k = 1; k < len; ++k) {
            const auto cont = static_cast<unsigned char>(text[i + k]);
            if ((cont & 0xC0) != 0x80) {
                throw ValidationError("utf8: invalid continuation byte at offset " + std::to_string(i + k));
            }
            cp = (cp << 6) | (cont & 0x3F);
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode(std::span<const char32_t> code_points) {
    std::string out;
    for (char32_t cp : code_points) {
        if (cp < 0x80) {
            out += static_cast<char>(cp);
        } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else if (cp < 0x10000) {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
            out += static_cast<char>(0xF0 | (cp >> 18));
            out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        }
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Vocabulary Vocabulary::from_text(std::string_view utf8) {
    std::set<char32_t> seen;
    for (char32_t cp : utf8_decode(utf8)) seen.insert(cp);
    seen.erase(U'\0');
    Vocabulary v;
    v.symbols_.push_back(U'\0');
    v.symbols_.insert(v.symbols_.end(), seen.begin(), seen.end());
    return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("vocab: " + path.string() + ": " + e.what());
    }
    if (!j.is_array() || j.empty()) throw ValidationError("vocab: " + path.string() + " must be a non-empty array");
    Vocabulary v;
    for (const auto& entry : j) {
        if (!entry.is_string()) throw ValidationError("vocab: entries must be strings");
        const auto cps = utf8_decode(entry.get<std::string>());
        if (cps.size() != 1) throw ValidationError("vocab: every entry must be a single character");
        v.symbols_.push_back(cps.front());
    }
    if (v.symbols_.front() != U'\0' || !std::is_sorted(v.symbols_.begin(), v.symbols_.end()) ||
        std::adjacent_find(v.symbols_.begin(), v.symbols_.end()) != v.symbols_.end()) {
        throw ValidationError("vocab: " + path.string() + " must start with U+0000 and be strictly ascending");
    }
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    nlohmann::json j = nlohmann::json::array();
    for (char32_t cp : symbols_) j.push_back(utf8_encode(std::span<const char32_t>(&cp, 1)));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << j.dump() << '\n';
}

TokenSeq Vocabulary::encode(std::string_view utf8, std::size_t* unknown_count) const {
    TokenSeq out;
    std::size_t unknown = 0;
    for (char32_t cp : utf8_decode(utf8)) {
        const auto it = std::lower_bound(symbols_.begin() + 1, symbols_.end(), cp);
        if (cp == U'\0' || it == symbols_.end() || *it != cp) {
            out.push_back(0);
            ++unknown;
        } else {
            out.push_back(static_cast<TokenId>(it - symbols_.begin()));
        }
    }
    if (unknown_count) *unknown_count = unknown;
    return out;
}

std::string Vocabulary::decode(std::span<const TokenId> tokens) const {
    std::vector<char32_t> cps;
    cps.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (t >= symbols_.size()) throw ValidationError("vocab: token id " + std::to_string(t) + " out of range");
        cps.push_back(symbols_[t]);
    }
    return utf8_encode(cps);
}

}  // namespace slicelab
