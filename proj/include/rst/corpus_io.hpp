#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rst/data.hpp"

namespace rst {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Line-delimited corpus format. One JSON object per line:
//   {"id": ..., "tokens": [...], "query": [...], "label": int,
//    "rationale_spans": [[start, end), ...]}
// query/label/rationale_spans are optional. Spans are token-index half-open
// intervals over `tokens`.
// ---------------------------------------------------------------------------

inline json document_to_json(const Document& d) {
    json j;
    j["id"] = d.id;
    j["tokens"] = d.tokens;
    if (d.query) j["query"] = *d.query;
    if (d.gold_label) j["label"] = *d.gold_label;
    if (d.gold_rationale) {
        json spans = json::array();
        for (auto [s, e] : d.gold_rationale->to_spans()) spans.push_back({s, e});
        j["rationale_spans"] = spans;
    }
    return j;
}

inline Document document_from_json(const json& j) {
    Document d;
    try {
        d.id = j.at("id").get<std::string>();
        d.tokens = j.at("tokens").get<std::vector<std::string>>();
        if (j.contains("query") && !j["query"].is_null())
            d.query = j["query"].get<std::vector<std::string>>();
        if (j.contains("label") && !j["label"].is_null()) d.gold_label = j["label"].get<int>();
        if (j.contains("rationale_spans") && !j["rationale_spans"].is_null()) {
            std::vector<std::pair<int, int>> spans;
            for (const auto& s : j["rationale_spans"])
                spans.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
            d.gold_rationale = RationaleMask::from_spans(spans, d.tokens.size(), d.id);
        }
    } catch (const json::exception& e) {
        throw ParseError("malformed corpus record" +
                         (d.id.empty() ? std::string() : " for document " + d.id) + ": " +
                         e.what());
    }
    d.validate();
    return d;
}

inline void save_corpus_jsonl(const Corpus& corpus, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const Document& d : corpus.documents) out << document_to_json(d).dump() << "\n";
    json meta;
    meta["num_classes"] = corpus.num_classes;
    meta["class_names"] = corpus.class_names;
    std::ofstream mout(path.string() + ".classes.json");
    mout << meta.dump(2) << "\n";
}

inline Corpus load_corpus_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus file " + path.string());
    Corpus corpus;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("invalid JSON at " + path.string() + ":" +
                             std::to_string(lineno) + ": " + e.what());
        }
        corpus.documents.push_back(document_from_json(j));
    }
    const fs::path meta_path = path.string() + ".classes.json";
    if (fs::exists(meta_path)) {
        std::ifstream min(meta_path);
        json meta = json::parse(min);
        corpus.num_classes = meta.at("num_classes").get<int>();
        corpus.class_names = meta.at("class_names").get<std::vector<std::string>>();
    } else {
        int k = 0;
        for (const Document& d : corpus.documents)
            if (d.gold_label) k = std::max(k, *d.gold_label + 1);
        corpus.num_classes = k;
        for (int c = 0; c < k; ++c) corpus.class_names.push_back("class_" + std::to_string(c));
    }
    corpus.validate();
    return corpus;
}

// ---------------------------------------------------------------------------
// ERASER-style layout:
//   <dir>/docs/<docid>        whitespace-tokenized text, one sentence per line
//   <dir>/annotations.jsonl   one record per instance:
//     {"annotation_id": ..., "docid": ..., "classification": "<class name>",
//      "query": "optional query text",
//      "evidences": [{"start_token": s, "end_token": e} |
//                    {"start_sentence": s, "end_sentence": e}, ...]}
// Sentence-level evidence is projected onto token offsets at load time.
// Class indices follow <dir>/classes.txt when present, otherwise the sorted
// set of classification strings.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct RawDoc {
    std::vector<std::string> tokens;
    std::vector<std::pair<int, int>> sentence_token_ranges;  // [start, end) per line
};

inline RawDoc read_doc_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open document file " + p.string());
    RawDoc doc;
    std::string line;
    while (std::getline(in, line)) {
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        const int start = static_cast<int>(doc.tokens.size());
        for (auto& t : toks) doc.tokens.push_back(std::move(t));
        doc.sentence_token_ranges.emplace_back(start, static_cast<int>(doc.tokens.size()));
    }
    return doc;
}

}  // namespace detail

inline Corpus load_eraser_corpus(const fs::path& dir) {
    const fs::path ann_path = dir / "annotations.jsonl";
    std::ifstream in(ann_path);
    if (!in) throw IoError("cannot open annotations file " + ann_path.string());

    std::map<std::string, detail::RawDoc> doc_cache;
    auto get_doc = [&](const std::string& docid) -> const detail::RawDoc& {
        auto it = doc_cache.find(docid);
        if (it == doc_cache.end())
            it = doc_cache.emplace(docid, detail::read_doc_file(dir / "docs" / docid)).first;
        return it->second;
    };

    struct Pending {
        Document doc;
        std::string class_name;
    };
    std::vector<Pending> pending;
    std::set<std::string> class_set;

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("invalid JSON at " + ann_path.string() + ":" +
                             std::to_string(lineno) + ": " + e.what());
        }
        std::string ann_id = j.value("annotation_id", "line " + std::to_string(lineno));
        try {
            const std::string docid = j.at("docid").get<std::string>();
            const detail::RawDoc& raw = get_doc(docid);
            if (raw.tokens.empty()) throw ParseError("document " + docid + " is empty");

            Document d;
            d.id = ann_id;
            d.tokens = raw.tokens;
            if (j.contains("query") && !j["query"].is_null()) {
                auto q = detail::split_ws(j["query"].get<std::string>());
                if (!q.empty()) d.query = std::move(q);
            }
            std::vector<std::pair<int, int>> spans;
            for (const auto& ev : j.value("evidences", json::array())) {
                if (ev.contains("start_token")) {
                    spans.emplace_back(ev.at("start_token").get<int>(),
                                       ev.at("end_token").get<int>());
                } else if (ev.contains("start_sentence")) {
                    const int s = ev.at("start_sentence").get<int>();
                    const int e = ev.at("end_sentence").get<int>();
                    const int ns = static_cast<int>(raw.sentence_token_ranges.size());
                    if (s < 0 || e > ns || s >= e)
                        throw ParseError("sentence span [" + std::to_string(s) + "," +
                                         std::to_string(e) + ") out of bounds for document " +
                                         ann_id);
                    spans.emplace_back(raw.sentence_token_ranges[s].first,
                                       raw.sentence_token_ranges[e - 1].second);
                } else {
                    throw ParseError("evidence without token or sentence span in document " +
                                     ann_id);
                }
            }
            d.gold_rationale = RationaleMask::from_spans(spans, d.tokens.size(), d.id);
            const std::string cls = j.at("classification").get<std::string>();
            class_set.insert(cls);
            pending.push_back({std::move(d), cls});
        } catch (const json::exception& e) {
            throw ParseError("malformed annotation record for document " + ann_id + ": " +
                             e.what());
        }
    }

    Corpus corpus;
    std::map<std::string, int> class_index;
    const fs::path classes_path = dir / "classes.txt";
    if (fs::exists(classes_path)) {
        std::ifstream cin_(classes_path);
        std::string name;
        while (std::getline(cin_, name))
            if (!name.empty()) {
                class_index[name] = static_cast<int>(corpus.class_names.size());
                corpus.class_names.push_back(name);
            }
    } else {
        for (const auto& name : class_set) {
            class_index[name] = static_cast<int>(corpus.class_names.size());
            corpus.class_names.push_back(name);
        }
    }
    corpus.num_classes = static_cast<int>(corpus.class_names.size());

    for (auto& p : pending) {
        auto it = class_index.find(p.class_name);
        if (it == class_index.end())
            throw ParseError("document " + p.doc.id + " has unknown class '" + p.class_name +
                             "'");
        p.doc.gold_label = it->second;
        corpus.documents.push_back(std::move(p.doc));
    }
    corpus.validate();
    return corpus;
}

}  // namespace rst
