#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "rst/common.hpp"

namespace rst {

enum class MaskKind { hard, soft };

// Per-token rationale annotation. Hard masks hold {0,1}, soft masks hold
// probabilities in [0,1]; length always equals the token sequence it covers.
struct RationaleMask {
    std::vector<double> values;
    MaskKind kind = MaskKind::hard;

    void validate() const {
        for (double v : values) {
            if (kind == MaskKind::hard) {
                if (v != 0.0 && v != 1.0) throw Error("hard rationale mask value not in {0,1}");
            } else if (v < 0.0 || v > 1.0) {
                throw Error("soft rationale mask value outside [0,1]");
            }
        }
    }

    static RationaleMask zeros(size_t n) { return {std::vector<double>(n, 0.0), MaskKind::hard}; }

    // Hard mask -> [start, end) token spans over contiguous runs of 1s.
    std::vector<std::pair<int, int>> to_spans() const {
        std::vector<std::pair<int, int>> spans;
        int start = -1;
        for (int i = 0; i < static_cast<int>(values.size()); ++i) {
            const bool on = values[i] >= 0.5;
            if (on && start < 0) start = i;
            if (!on && start >= 0) {
                spans.emplace_back(start, i);
                start = -1;
            }
        }
        if (start >= 0) spans.emplace_back(start, static_cast<int>(values.size()));
        return spans;
    }

    static RationaleMask from_spans(const std::vector<std::pair<int, int>>& spans, size_t n,
                                    const std::string& doc_id) {
        RationaleMask m = zeros(n);
        for (auto [s, e] : spans) {
            if (s < 0 || e > static_cast<int>(n) || s >= e)
                throw ParseError("rationale span [" + std::to_string(s) + "," +
                                 std::to_string(e) + ") out of bounds for document " + doc_id);
            for (int i = s; i < e; ++i) m.values[i] = 1.0;
        }
        return m;
    }
};

struct Document {
    std::string id;
    std::vector<std::string> tokens;
    std::optional<std::vector<std::string>> query;
    std::optional<int> gold_label;
    std::optional<RationaleMask> gold_rationale;

    void validate() const {
        if (tokens.empty()) throw Error("document " + id + " has no tokens");
        if (gold_rationale) {
            if (gold_rationale->values.size() != tokens.size())
                throw Error("document " + id + " rationale length " +
                            std::to_string(gold_rationale->values.size()) +
                            " != token count " + std::to_string(tokens.size()));
            gold_rationale->validate();
        }
    }
};

struct Corpus {
    std::vector<Document> documents;
    int num_classes = 0;
    std::vector<std::string> class_names;

    void validate() const {
        for (const Document& d : documents) {
            d.validate();
            if (d.gold_label && (*d.gold_label < 0 || *d.gold_label >= num_classes))
                throw Error("document " + d.id + " label out of range");
        }
    }
};

// labeled keeps full annotations; unlabeled is stripped for training while
// sealed_gold retains the originals for evaluation-only measurement.
struct FewShotSplit {
    Corpus labeled;
    Corpus unlabeled;
    Corpus sealed_gold;
    std::uint64_t seed = 0;
};

// Stratified deterministic few-shot sampling: n_per_class labeled documents
// per class (or all available if fewer), remainder unlabeled with gold
// fields stripped.
inline FewShotSplit sample_few_shot(const Corpus& corpus, int n_per_class, std::uint64_t seed) {
    if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
    corpus.validate();

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < static_cast<int>(corpus.documents.size()); ++i) {
        const Document& d = corpus.documents[i];
        if (!d.gold_label)
            throw Error("few-shot sampling requires gold labels; document " + d.id +
                        " has none");
        by_class[*d.gold_label].push_back(i);
    }
    for (int c = 0; c < corpus.num_classes; ++c) {
        if (!by_class.count(c)) {
            const std::string name =
                c < static_cast<int>(corpus.class_names.size()) ? corpus.class_names[c]
                                                                : std::to_string(c);
            throw Error("class '" + name + "' has zero examples");
        }
    }

    std::unordered_set<int> picked;
    std::mt19937_64 rng(derive_seed(seed, /*phase=*/0xF2570u));
    for (auto& [c, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const int take = std::min<int>(n_per_class, static_cast<int>(members.size()));
        for (int i = 0; i < take; ++i) picked.insert(members[i]);
    }

    FewShotSplit split;
    split.seed = seed;
    split.labeled.num_classes = split.unlabeled.num_classes = split.sealed_gold.num_classes =
        corpus.num_classes;
    split.labeled.class_names = split.unlabeled.class_names = split.sealed_gold.class_names =
        corpus.class_names;
    for (int i = 0; i < static_cast<int>(corpus.documents.size()); ++i) {
        const Document& d = corpus.documents[i];
        if (picked.count(i)) {
            if (!d.gold_rationale)
                throw Error("labeled split requires gold rationales; document " + d.id +
                            " has none");
            split.labeled.documents.push_back(d);
        } else {
            Document stripped = d;
            stripped.gold_label.reset();
            stripped.gold_rationale.reset();
            split.unlabeled.documents.push_back(std::move(stripped));
            split.sealed_gold.documents.push_back(d);
        }
    }
    return split;
}

}  // namespace rst
