#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rst/data.hpp"

namespace rst {

// Word-level vocabulary for the reference encoder. Gold annotations stay
// word-level in the data module; an encoder with subword units would expand
// them behind build_input (a word's mask value copies to its subwords).
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kMask = 2;
    static constexpr int kSep = 3;

    Vocabulary() : id_to_token_{"[PAD]", "[UNK]", "[MASK]", "[SEP]"} {
        for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i)
            token_to_id_[id_to_token_[i]] = i;
    }

    int add(const std::string& token) {
        auto it = token_to_id_.find(token);
        if (it != token_to_id_.end()) return it->second;
        const int id = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(token);
        token_to_id_[token] = id;
        return id;
    }

    int id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const { return id_to_token_.at(id); }
    int size() const { return static_cast<int>(id_to_token_.size()); }

    // Insertion follows document order, so building from the same corpora
    // always yields the same mapping.
    template <typename... Cs>
    static Vocabulary build(const Cs&... corpora) {
        Vocabulary v;
        (v.absorb(corpora), ...);
        return v;
    }

    void absorb(const Corpus& corpus) {
        for (const Document& d : corpus.documents) {
            for (const auto& t : d.tokens) add(t);
            if (d.query)
                for (const auto& t : *d.query) add(t);
        }
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write vocabulary to " + path);
        for (const auto& t : id_to_token_) out << t << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open vocabulary " + path);
        Vocabulary v;
        std::string line;
        int idx = 0;
        while (std::getline(in, line)) {
            if (idx < 4) {
                if (line != v.id_to_token_[idx])
                    throw ParseError("vocabulary " + path + " missing special token row " +
                                     std::to_string(idx));
            } else {
                v.add(line);
            }
            ++idx;
        }
        return v;
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// Encoder-ready token ids. Layout: document tokens, then ([SEP] query)
// when a query is present. The rationale-target region is [0, doc_len);
// separator and query positions are never rationale targets.
struct ModelInput {
    std::vector<int> ids;
    int doc_len = 0;
    bool truncated = false;
};

// Truncation drops the document tail first and preserves the query; only
// if the query alone exceeds the budget is its own tail cut.
inline ModelInput build_input(const Document& doc, const Vocabulary& vocab, int max_len) {
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    doc.validate();
    ModelInput input;
    const int n_doc = static_cast<int>(doc.tokens.size());
    const int q_len = doc.query ? static_cast<int>(doc.query->size()) : 0;

    int doc_keep = n_doc, q_keep = q_len;
    if (q_len > 0) {
        const int budget = max_len - 1 - q_len;  // [SEP] overhead
        if (budget >= n_doc) {
            doc_keep = n_doc;
        } else if (budget >= 1) {
            doc_keep = budget;
        } else {
            doc_keep = 1;
            q_keep = std::max(0, max_len - 2);
        }
        input.truncated = doc_keep < n_doc || q_keep < q_len;
    } else {
        doc_keep = std::min(n_doc, max_len);
        input.truncated = doc_keep < n_doc;
    }

    input.ids.reserve(doc_keep + (q_keep > 0 ? 1 + q_keep : 0));
    for (int i = 0; i < doc_keep; ++i) input.ids.push_back(vocab.id(doc.tokens[i]));
    if (q_keep > 0) {
        input.ids.push_back(Vocabulary::kSep);
        for (int i = 0; i < q_keep; ++i) input.ids.push_back(vocab.id((*doc.query)[i]));
    }
    input.doc_len = doc_keep;
    return input;
}

}  // namespace rst
