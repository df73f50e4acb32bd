#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "rst/data.hpp"

namespace rst {

enum class Averaging { macro, micro };

// Macro-averaged F1 over K classes (micro available for comparison runs).
inline double task_f1(const std::vector<int>& predictions, const std::vector<int>& golds, int k,
                      Averaging mode = Averaging::macro) {
    if (predictions.size() != golds.size()) throw Error("task_f1: length mismatch");
    if (predictions.empty()) throw Error("task_f1: empty input");
    std::vector<long> tp(k, 0), fp(k, 0), fn(k, 0);
    for (size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], g = golds[i];
        if (p < 0 || p >= k || g < 0 || g >= k) throw Error("task_f1: label out of range");
        if (p == g) ++tp[p];
        else {
            ++fp[p];
            ++fn[g];
        }
    }
    if (mode == Averaging::micro) {
        long tps = 0, fps = 0, fns = 0;
        for (int c = 0; c < k; ++c) tps += tp[c], fps += fp[c], fns += fn[c];
        const double denom = 2.0 * tps + fps + fns;
        return denom > 0 ? 2.0 * tps / denom : 0.0;
    }
    double sum = 0;
    for (int c = 0; c < k; ++c) {
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        sum += denom > 0 ? 2.0 * tp[c] / denom : 0.0;
    }
    return sum / k;
}

struct TokenPRF {
    double precision = 0, recall = 0, f1 = 0;
};

// Micro-averaged token precision/recall/F1 over all documents' masks;
// all-zero denominators give 0 by convention.
inline TokenPRF token_prf(const std::vector<RationaleMask>& pred,
                          const std::vector<RationaleMask>& gold,
                          Averaging mode = Averaging::micro) {
    if (pred.size() != gold.size()) throw Error("token_prf: document count mismatch");
    auto prf_from = [](double tp, double fp, double fn) {
        TokenPRF r;
        r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        r.f1 = r.precision + r.recall > 0
                   ? 2 * r.precision * r.recall / (r.precision + r.recall)
                   : 0.0;
        return r;
    };
    if (mode == Averaging::macro) {
        TokenPRF acc;
        for (size_t d = 0; d < pred.size(); ++d) {
            if (pred[d].values.size() != gold[d].values.size())
                throw Error("token_prf: mask length mismatch at document " + std::to_string(d));
            double tp = 0, fp = 0, fn = 0;
            for (size_t j = 0; j < pred[d].values.size(); ++j) {
                const bool p = pred[d].values[j] >= 0.5, g = gold[d].values[j] >= 0.5;
                tp += p && g;
                fp += p && !g;
                fn += !p && g;
            }
            const TokenPRF r = prf_from(tp, fp, fn);
            acc.precision += r.precision;
            acc.recall += r.recall;
            acc.f1 += r.f1;
        }
        const double n = static_cast<double>(pred.size());
        return {acc.precision / n, acc.recall / n, acc.f1 / n};
    }
    double tp = 0, fp = 0, fn = 0;
    for (size_t d = 0; d < pred.size(); ++d) {
        if (pred[d].values.size() != gold[d].values.size())
            throw Error("token_prf: mask length mismatch at document " + std::to_string(d));
        for (size_t j = 0; j < pred[d].values.size(); ++j) {
            const bool p = pred[d].values[j] >= 0.5, g = gold[d].values[j] >= 0.5;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
    }
    return prf_from(tp, fp, fn);
}

// Corpus-level BLEU with uniform unigram+bigram weights and brevity
// penalty; candidates/references are the rationale token subsequences.
// Any zero modified precision (or an empty candidate set) gives 0.
inline double bleu2(const std::vector<std::vector<std::string>>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
    if (candidates.size() != references.size()) throw Error("bleu2: corpus size mismatch");
    long cand_len = 0, ref_len = 0;
    long match[2] = {0, 0}, total[2] = {0, 0};
    auto count_ngrams = [](const std::vector<std::string>& toks, int n) {
        std::map<std::vector<std::string>, long> counts;
        for (size_t i = 0; i + n <= toks.size(); ++i)
            ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
        return counts;
    };
    for (size_t d = 0; d < candidates.size(); ++d) {
        cand_len += static_cast<long>(candidates[d].size());
        ref_len += static_cast<long>(references[d].size());
        for (int n = 1; n <= 2; ++n) {
            auto cand = count_ngrams(candidates[d], n);
            auto ref = count_ngrams(references[d], n);
            for (const auto& [ng, c] : cand) {
                total[n - 1] += c;
                auto it = ref.find(ng);
                if (it != ref.end()) match[n - 1] += std::min(c, it->second);  // clipped
            }
        }
    }
    if (cand_len == 0) return 0.0;
    if (total[0] == 0 || match[0] == 0) return 0.0;
    if (total[1] == 0 || match[1] == 0) return 0.0;
    const double p1 = static_cast<double>(match[0]) / total[0];
    const double p2 = static_cast<double>(match[1]) / total[1];
    const double bp =
        cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
    return bp * std::exp(0.5 * std::log(p1) + 0.5 * std::log(p2));
}

// 100 * (total 1s) / (total tokens).
inline double rationale_pct(const std::vector<RationaleMask>& masks) {
    if (masks.empty()) throw Error("rationale_pct: empty mask set");
    double ones = 0, total = 0;
    for (const auto& m : masks) {
        for (double v : m.values) ones += v >= 0.5;
        total += static_cast<double>(m.values.size());
    }
    if (total == 0) throw Error("rationale_pct: no tokens");
    return 100.0 * ones / total;
}

struct MetricReport {
    double task_f1 = 0;
    double token_precision = 0, token_recall = 0, token_f1 = 0;
    double bleu2 = 0;
    double rationale_pct = 0;
    std::map<int, long> support;  // gold count per class

    // Flat key-value record for the run log.
    std::map<std::string, std::string> to_flat() const {
        std::map<std::string, std::string> kv;
        auto put = [&](const std::string& k, double v) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            kv[k] = buf;
        };
        put("task_f1", task_f1);
        put("token_precision", token_precision);
        put("token_recall", token_recall);
        put("token_f1", token_f1);
        put("bleu2", bleu2);
        put("rationale_pct", rationale_pct);
        for (const auto& [c, n] : support)
            kv["support_class_" + std::to_string(c)] = std::to_string(n);
        return kv;
    }
};

}  // namespace rst
