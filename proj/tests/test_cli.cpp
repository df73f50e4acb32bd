#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "test_util.hpp"

using test_util::TempDir;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    TempDir out("cli_out");
    const fs::path capture = out.path / "stdout.txt";
    const std::string cmd =
        std::string(RST_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(capture);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WEXITSTATUS(status), ss.str()};
}

std::string file_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_synth_config(const fs::path& p, int corpus_size = 120, int doc_len = 8) {
    std::ofstream out(p);
    out << "vocab_size = 40\n"
        << "num_classes = 2\n"
        << "phrase_length = 2\n"
        << "doc_len_min = " << doc_len << "\n"
        << "doc_len_max = " << doc_len << "\n"
        << "corpus_size = " << corpus_size << "\n";
}

// one prepared split shared by the training-path tests
struct PreparedSplit {
    TempDir tmp{"cli_split"};
    fs::path split;

    PreparedSplit() {
        const fs::path cfg = tmp.path / "synth.ini";
        write_synth_config(cfg);
        split = tmp.path / "split";
        CmdResult r = run_cli("prepare --synthetic " + cfg.string() +
                              " --n-per-class 10 --val-count 24 --seed 3 --out " +
                              split.string());
        REQUIRE(r.exit_code == 0);
    }

    std::string train_flags(const fs::path& out_dir) const {
        return " --split " + split.string() + " --out " + out_dir.string() +
               " --seed 5 --max-iterations 2 --teacher-epochs 2 --student-epochs 1"
               " --batch-size 8 --learning-rate 0.002 --patience 0"
               " --hidden-dim 16 --num-layers 1 --num-heads 2 --max-len 10";
    }
};

}  // namespace

TEST_CASE("prepare writes a deterministic manifest with the split arithmetic") {
    TempDir tmp("cli_prepare");
    const fs::path cfg = tmp.path / "synth.ini";
    write_synth_config(cfg, 1000, 6);

    const std::string args = "prepare --synthetic " + cfg.string() +
                             " --n-per-class 20 --val-count 50 --seed 9 --out ";
    CmdResult r1 = run_cli(args + (tmp.path / "s1").string());
    REQUIRE(r1.exit_code == 0);

    const auto manifest = nlohmann::json::parse(file_text(tmp.path / "s1" / "manifest.json"));
    REQUIRE(manifest.at("labeled").get<int>() == 40);       // K=2, n=20
    REQUIRE(manifest.at("unlabeled").get<int>() == 960);
    REQUIRE(manifest.at("validation").get<int>() == 50);

    CmdResult r2 = run_cli(args + (tmp.path / "s2").string());
    REQUIRE(r2.exit_code == 0);
    REQUIRE(file_text(tmp.path / "s1" / "manifest.json") ==
            file_text(tmp.path / "s2" / "manifest.json"));
    REQUIRE(file_text(tmp.path / "s1" / "labeled.jsonl") ==
            file_text(tmp.path / "s2" / "labeled.jsonl"));
}

TEST_CASE("prepare rejects contradictory or missing sources") {
    TempDir tmp("cli_bad");
    CmdResult r = run_cli("prepare --out " + (tmp.path / "x").string());
    REQUIRE(r.exit_code == 1);
    CmdResult r2 = run_cli("prepare --corpus a.jsonl --synthetic b.ini --out " +
                           (tmp.path / "y").string());
    REQUIRE(r2.exit_code == 1);
}

TEST_CASE("unknown flags exit with a usage error") {
    CmdResult r = run_cli("train --definitely-not-a-flag");
    REQUIRE(r.exit_code == 1);
}

TEST_CASE("train, eval, export-curves and resume work end to end") {
    PreparedSplit prep;
    TempDir tmp("cli_train");

    const fs::path run1 = tmp.path / "run1";
    CmdResult t = run_cli("train" + prep.train_flags(run1));
    INFO(t.output);
    REQUIRE(t.exit_code == 0);

    // --max-iterations 2 -> two records in the run log
    std::ifstream log(run1 / "iterations.jsonl");
    int lines = 0;
    std::string line;
    std::vector<std::string> records;
    while (std::getline(log, line))
        if (!line.empty()) {
            ++lines;
            records.push_back(line);
        }
    REQUIRE(lines == 2);

    SECTION("evaluating a checkpoint twice gives identical reports") {
        const std::string eval_args = "eval --checkpoint " + (run1 / "best.ckpt").string() +
                                      " --corpus " + (prep.split / "validation.jsonl").string() +
                                      " --vocab " + (prep.split / "vocab.txt").string();
        CmdResult e1 = run_cli(eval_args + " --out " + (tmp.path / "r1.txt").string());
        CmdResult e2 = run_cli(eval_args + " --out " + (tmp.path / "r2.txt").string());
        REQUIRE(e1.exit_code == 0);
        REQUIRE(e2.exit_code == 0);
        REQUIRE(file_text(tmp.path / "r1.txt") == file_text(tmp.path / "r2.txt"));
        REQUIRE(e1.output.find("task_f1=") != std::string::npos);
    }

    SECTION("export-curves emits one row per iteration, idempotently") {
        CmdResult c1 = run_cli("export-curves --run " + run1.string());
        REQUIRE(c1.exit_code == 0);
        const std::string f1 = file_text(run1 / "curves" / "task_f1.tsv");
        REQUIRE(std::count(f1.begin(), f1.end(), '\n') == 3);  // header + 2 rows
        const auto rec = nlohmann::json::parse(records[0]);
        std::ostringstream expect;
        expect << 1 << "\t" << rec.at("val_task_f1").get<double>();
        REQUIRE(f1.find(expect.str()) != std::string::npos);

        CmdResult c2 = run_cli("export-curves --run " + run1.string());
        REQUIRE(c2.exit_code == 0);
        REQUIRE(file_text(run1 / "curves" / "task_f1.tsv") == f1);
    }

    SECTION("a resumed shorter run converges to the same records") {
        const fs::path run2 = tmp.path / "run2";
        std::string base = prep.train_flags(run2);
        const std::string one_iter =
            std::regex_replace(base, std::regex("--max-iterations 2"), "--max-iterations 1");
        REQUIRE(run_cli("train" + one_iter).exit_code == 0);
        CmdResult resumed = run_cli("train" + base + " --resume");
        REQUIRE(resumed.exit_code == 0);
        REQUIRE(file_text(run2 / "iterations.jsonl") == file_text(run1 / "iterations.jsonl"));
    }

    SECTION("missing run log is an error for export-curves") {
        CmdResult c = run_cli("export-curves --run " + (tmp.path / "nope").string());
        REQUIRE(c.exit_code == 1);
    }
}

TEST_CASE("train --ablate zeroes the requested coefficients in the snapshot") {
    PreparedSplit prep;
    TempDir tmp("cli_ablate_flag");
    const fs::path run = tmp.path / "run";
    CmdResult t = run_cli("train" + prep.train_flags(run) + " --ablate suff,comp,co");
    INFO(t.output);
    REQUIRE(t.exit_code == 0);
    const auto cfg = nlohmann::json::parse(file_text(run / "config.json"));
    REQUIRE(cfg.at("train").at("coef_wu").get<double>() == 1.0);
    REQUIRE(cfg.at("train").at("coef_suff").get<double>() == 0.0);
    REQUIRE(cfg.at("train").at("coef_comp").get<double>() == 0.0);
    REQUIRE(cfg.at("train").at("coef_sparsity").get<double>() == 0.0);
    REQUIRE(cfg.at("train").at("coef_continuity").get<double>() == 0.0);
}

TEST_CASE("ablate runs the requested subsets and tabulates them") {
    PreparedSplit prep;
    TempDir tmp("cli_ablate");
    const fs::path out = tmp.path / "ablation";
    CmdResult r = run_cli("ablate" + prep.train_flags(out) + " --subsets teacher_only,full");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    const std::string table = file_text(out / "ablation.tsv");
    REQUIRE(std::count(table.begin(), table.end(), '\n') == 3);  // header + 2 rows
    REQUIRE(table.find("teacher_only\t") != std::string::npos);
    REQUIRE(table.find("full\t") != std::string::npos);

    // teacher-only arm must match a plain train run with zero student epochs
    const fs::path run_t = tmp.path / "teacher_run";
    std::string flags = prep.train_flags(run_t);
    flags = std::regex_replace(flags, std::regex("--max-iterations 2"), "--max-iterations 1");
    flags = std::regex_replace(flags, std::regex("--student-epochs 1"), "--student-epochs 0");
    REQUIRE(run_cli("train" + flags).exit_code == 0);
    const auto a = nlohmann::json::parse(file_text(out / "teacher_only" / "iterations.jsonl"));
    const auto b = nlohmann::json::parse(file_text(run_t / "iterations.jsonl"));
    REQUIRE(a.at("val_task_f1") == b.at("val_task_f1"));
    REQUIRE(a.at("val_total_loss") == b.at("val_total_loss"));

    CmdResult bad = run_cli("ablate" + prep.train_flags(tmp.path / "x") + " --subsets bogus");
    REQUIRE(bad.exit_code == 1);
}

TEST_CASE("locked run directories refuse a second writer") {
    PreparedSplit prep;
    TempDir tmp("cli_lock");
    const fs::path run = tmp.path / "run";
    fs::create_directories(run);
    std::ofstream(run / "run.lock") << "held\n";
    CmdResult r = run_cli("train" + prep.train_flags(run));
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.output.find("lock") != std::string::npos);
}
