#pragma once

#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rst/data.hpp"

namespace rst {

// Desk-scale verification corpus: every document is noise tokens with one
// contiguous class-identifying phrase planted at a random position. The
// label is fully determined by the phrase, and the gold rationale is
// exactly the phrase positions.
struct SyntheticConfig {
    int vocab_size = 200;
    int num_classes = 2;
    int phrase_length = 3;
    // Explicit phrases override phrase_length-based generation.
    std::vector<std::vector<std::string>> class_phrases;
    int doc_len_min = 30;
    int doc_len_max = 30;
    std::string noise_distribution = "uniform";
    int corpus_size = 1000;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
        if (corpus_size < 1) throw ConfigError("synthetic: corpus_size must be >= 1");
        if (doc_len_min < 1 || doc_len_max < doc_len_min)
            throw ConfigError("synthetic: invalid document length range");
        if (noise_distribution != "uniform")
            throw ConfigError("synthetic: unsupported noise distribution '" +
                              noise_distribution + "'");
        if (class_phrases.empty() && phrase_length < 1)
            throw ConfigError("synthetic: phrase_length must be >= 1");
        if (!class_phrases.empty() &&
            static_cast<int>(class_phrases.size()) != num_classes)
            throw ConfigError("synthetic: class_phrases count != num_classes");
    }
};

inline SyntheticConfig parse_synthetic_config(const std::string& text) {
    SyntheticConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (!blank)
                throw ParseError("synthetic config line " + std::to_string(lineno) +
                                 ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
            else if (key == "num_classes") cfg.num_classes = std::stoi(value);
            else if (key == "phrase_length") cfg.phrase_length = std::stoi(value);
            else if (key == "doc_len_min") cfg.doc_len_min = std::stoi(value);
            else if (key == "doc_len_max") cfg.doc_len_max = std::stoi(value);
            else if (key == "corpus_size") cfg.corpus_size = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "noise_distribution") cfg.noise_distribution = value;
            else if (key.rfind("class_phrase_", 0) == 0) {
                const int c = std::stoi(key.substr(std::string("class_phrase_").size()));
                if (c < 0) throw ParseError("negative class index");
                if (static_cast<int>(cfg.class_phrases.size()) <= c)
                    cfg.class_phrases.resize(c + 1);
                std::istringstream ws(value);
                std::string tok;
                cfg.class_phrases[c].clear();
                while (ws >> tok) cfg.class_phrases[c].push_back(tok);
            } else {
                throw ParseError("unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ParseError("synthetic config line " + std::to_string(lineno) +
                             ": bad value for " + key);
        }
    }
    return cfg;
}

inline SyntheticConfig load_synthetic_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open synthetic config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_synthetic_config(ss.str());
}

inline Corpus generate_synthetic(const SyntheticConfig& config) {
    config.validate();

    std::vector<std::vector<std::string>> phrases = config.class_phrases;
    if (phrases.empty()) {
        for (int c = 0; c < config.num_classes; ++c) {
            std::vector<std::string> p;
            for (int i = 0; i < config.phrase_length; ++i)
                p.push_back("sig" + std::to_string(c) + "_" + std::to_string(i));
            phrases.push_back(std::move(p));
        }
    }

    std::set<std::string> signal_tokens;
    int max_phrase_len = 0;
    for (const auto& p : phrases) {
        if (p.empty()) throw ConfigError("synthetic: empty class phrase");
        max_phrase_len = std::max<int>(max_phrase_len, static_cast<int>(p.size()));
        for (const auto& t : p)
            if (!signal_tokens.insert(t).second)
                throw ConfigError("synthetic: signal token '" + t +
                                  "' shared between phrases");
    }
    const int noise_count = config.vocab_size - static_cast<int>(signal_tokens.size());
    if (noise_count < 1)
        throw ConfigError("synthetic: vocabulary of " + std::to_string(config.vocab_size) +
                          " too small to keep " + std::to_string(signal_tokens.size()) +
                          " signal tokens disjoint from noise tokens");
    if (config.doc_len_min < max_phrase_len)
        throw ConfigError("synthetic: documents shorter than the longest signal phrase");

    std::vector<std::string> noise;
    noise.reserve(noise_count);
    for (int i = 0; noise.size() < static_cast<size_t>(noise_count); ++i) {
        std::string t = "w" + std::to_string(i);
        if (!signal_tokens.count(t)) noise.push_back(std::move(t));
    }

    std::mt19937_64 rng(derive_seed(config.seed, /*phase=*/0x5717u));
    std::uniform_int_distribution<int> class_dist(0, config.num_classes - 1);
    std::uniform_int_distribution<int> len_dist(config.doc_len_min, config.doc_len_max);
    std::uniform_int_distribution<int> noise_dist(0, noise_count - 1);

    Corpus corpus;
    corpus.num_classes = config.num_classes;
    for (int c = 0; c < config.num_classes; ++c)
        corpus.class_names.push_back("class_" + std::to_string(c));

    for (int i = 0; i < config.corpus_size; ++i) {
        const int label = class_dist(rng);
        const auto& phrase = phrases[label];
        const int plen = static_cast<int>(phrase.size());
        const int len = len_dist(rng);
        std::uniform_int_distribution<int> pos_dist(0, len - plen);
        const int pos = pos_dist(rng);

        Document d;
        d.id = "syn-" + std::to_string(i);
        d.tokens.reserve(len);
        for (int t = 0; t < len; ++t) d.tokens.push_back(noise[noise_dist(rng)]);
        RationaleMask mask = RationaleMask::zeros(len);
        for (int t = 0; t < plen; ++t) {
            d.tokens[pos + t] = phrase[t];
            mask.values[pos + t] = 1.0;
        }
        d.gold_label = label;
        d.gold_rationale = std::move(mask);
        corpus.documents.push_back(std::move(d));
    }
    return corpus;
}

}  // namespace rst
