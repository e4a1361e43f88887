#pragma once

// Unified text+speech vocabulary.
//
// Id layout, dense in [0, total_size):
//   [0, n_text)                      text symbols, in the order given
//   [n_text, n_text + n_codes)       speech tokens [Sp1]..[SpN], one per codec index
//   next four ids                    [Text], [Speech], </s>, [Pad]
//   remainder up to total_size       reserved fill ids [Unused*], never emitted
//
// total_size is rounded up to a multiple of 8. Text tokenization is a plain
// symbol table; adding speech tokens appends ids after the text block and
// never changes how text is segmented.

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "unitlm/common.hpp"

namespace unitlm {

using TokenId = int32_t;

class UnifiedVocab {
public:
    static UnifiedVocab build(const std::vector<std::string>& text_symbols, int n_codes) {
        require(n_codes >= 1, ErrorCode::invalid_argument, "build_vocab: n_codes must be >= 1");
        require(!text_symbols.empty(), ErrorCode::invalid_argument,
                "build_vocab: text_symbols must be non-empty");
        std::set<std::string> seen;
        for (const auto& s : text_symbols) {
            require(seen.insert(s).second, ErrorCode::invalid_argument,
                    "build_vocab: duplicate text symbol: " + s);
        }

        UnifiedVocab v;
        v.text_tokens_ = text_symbols;
        v.n_codes_ = n_codes;
        int n_text = int(text_symbols.size());
        v.speech_base_ = n_text;
        v.text_delim_id_ = n_text + n_codes;
        v.speech_delim_id_ = v.text_delim_id_ + 1;
        v.eos_id_ = v.speech_delim_id_ + 1;
        v.pad_id_ = v.eos_id_ + 1;
        int used = v.pad_id_ + 1;
        v.total_size_ = (used + 7) / 8 * 8;
        for (size_t i = 0; i < text_symbols.size(); ++i) v.id_of_text_[text_symbols[i]] = TokenId(i);
        return v;
    }

    int n_text() const { return int(text_tokens_.size()); }
    int n_codes() const { return n_codes_; }
    int total_size() const { return total_size_; }
    TokenId text_delim_id() const { return text_delim_id_; }
    TokenId speech_delim_id() const { return speech_delim_id_; }
    TokenId eos_id() const { return eos_id_; }
    TokenId pad_id() const { return pad_id_; }
    TokenId speech_base() const { return speech_base_; }

    // Codec index -> token id. Bijective over the speech block.
    TokenId speech_id(int code) const {
        require(code >= 0 && code < n_codes_, ErrorCode::invalid_argument,
                "speech_id: code out of range: " + std::to_string(code));
        return speech_base_ + code;
    }

    // Inverse of speech_id.
    int code_of(TokenId id) const {
        require(is_speech(id), ErrorCode::invalid_argument,
                "code_of: id outside the speech block: " + std::to_string(id));
        return int(id - speech_base_);
    }

    bool is_speech(TokenId id) const { return id >= speech_base_ && id < speech_base_ + n_codes_; }
    bool is_text(TokenId id) const { return id >= 0 && id < speech_base_; }

    TokenId text_id(const std::string& symbol) const {
        auto it = id_of_text_.find(symbol);
        require(it != id_of_text_.end(), ErrorCode::invalid_argument,
                "unknown text symbol: " + symbol);
        return it->second;
    }

    std::string symbol(TokenId id) const {
        require(id >= 0 && id < total_size_, ErrorCode::invalid_argument,
                "symbol: id out of range: " + std::to_string(id));
        if (id < speech_base_) return text_tokens_[size_t(id)];
        if (is_speech(id)) return "[Sp" + std::to_string(code_of(id) + 1) + "]";
        if (id == text_delim_id_) return "[Text]";
        if (id == speech_delim_id_) return "[Speech]";
        if (id == eos_id_) return "</s>";
        if (id == pad_id_) return "[Pad]";
        return "[Unused" + std::to_string(id - pad_id_ - 1) + "]";
    }

    // One symbol per line; the symbol on line i+1 has id i. The header line
    // carries everything needed to validate a reload.
    void save(const std::string& path) const {
        std::string out = "#unitlm-vocab v1 n_codes=" + std::to_string(n_codes_) +
                          " n_text=" + std::to_string(n_text()) +
                          " text_delim=" + std::to_string(text_delim_id_) +
                          " speech_delim=" + std::to_string(speech_delim_id_) +
                          " eos=" + std::to_string(eos_id_) + " pad=" + std::to_string(pad_id_) +
                          " total=" + std::to_string(total_size_) + "\n";
        for (TokenId id = 0; id < total_size_; ++id) out += symbol(id) + "\n";
        write_file_bytes(path, out);
    }

    static UnifiedVocab load(const std::string& path) {
        std::string bytes = read_file_bytes(path);
        std::vector<std::string> lines;
        size_t pos = 0;
        while (pos < bytes.size()) {
            size_t nl = bytes.find('\n', pos);
            if (nl == std::string::npos) nl = bytes.size();
            lines.push_back(bytes.substr(pos, nl - pos));
            pos = nl + 1;
        }
        require(!lines.empty() && lines[0].rfind("#unitlm-vocab v1 ", 0) == 0, ErrorCode::format,
                "vocab file: missing or unrecognized header: " + path);
        auto field = [&](const std::string& key) {
            std::string needle = " " + key + "=";
            size_t at = lines[0].find(needle);
            require(at != std::string::npos, ErrorCode::format, "vocab header: missing " + key);
            return std::stoi(lines[0].substr(at + needle.size()));
        };
        int n_codes = field("n_codes");
        int n_text = field("n_text");
        int total = field("total");
        require(int(lines.size()) >= total + 1, ErrorCode::format, "vocab file truncated");
        std::vector<std::string> text_symbols(lines.begin() + 1, lines.begin() + 1 + n_text);
        UnifiedVocab v = build(text_symbols, n_codes);
        require(v.total_size_ == total && v.text_delim_id_ == field("text_delim") &&
                    v.speech_delim_id_ == field("speech_delim") && v.eos_id_ == field("eos") &&
                    v.pad_id_ == field("pad"),
                ErrorCode::format, "vocab header inconsistent with symbol table");
        for (TokenId id = 0; id < total; ++id) {
            require(lines[size_t(id) + 1] == v.symbol(id), ErrorCode::format,
                    "vocab line " + std::to_string(id + 1) + " does not match id assignment");
        }
        return v;
    }

private:
    std::vector<std::string> text_tokens_;
    std::unordered_map<std::string, TokenId> id_of_text_;
    int n_codes_ = 0;
    int total_size_ = 0;
    TokenId speech_base_ = 0;
    TokenId text_delim_id_ = 0;
    TokenId speech_delim_id_ = 0;
    TokenId eos_id_ = 0;
    TokenId pad_id_ = 0;
};

inline UnifiedVocab build_vocab(const std::vector<std::string>& text_symbols, int n_codes) {
    return UnifiedVocab::build(text_symbols, n_codes);
}

}  // namespace unitlm
