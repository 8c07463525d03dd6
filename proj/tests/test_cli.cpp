// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sys/wait.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "slicelab/commands.hpp"
#include "slicelab/error.hpp"
#include "support.hpp"

using namespace slicelab;
using namespace slicelab::cli;
using testing::scratch_dir;
using testing::slurp;

namespace {

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        std::vector<std::string> cells;
        std::istringstream cs(line);
        std::string cell;
        while (std::getline(cs, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::string cell(const std::vector<std::vector<std::string>>& rows, std::size_t r, const std::string& column) {
    const auto& header = rows.front();
    const auto it = std::find(header.begin(), header.end(), column);
    REQUIRE(it != header.end());
    return rows.at(r).at(static_cast<std::size_t>(it - header.begin()));
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + SLICELAB_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small untrained model plus a corpus and a task file, built once per test.
struct Fixture {
    fs::path dir, model, corpus, task;

    explicit Fixture(const std::string& name) : dir(scratch_dir(name)) {
        corpus = dir / "corpus.txt";
        write_text(corpus, slurp(fs::path(SLICELAB_DATA_DIR) / "sotu_valid.txt").substr(0, 4000));
        task = dir / "task.jsonl";
        std::istringstream items(slurp(fs::path(SLICELAB_DATA_DIR) / "tasks" / "cloze2.jsonl"));
        std::string line, first;
        for (int i = 0; i < 40 && std::getline(items, line); ++i) first += line + "\n";
        write_text(task, first);
        model = dir / "model";
        InitOptions init;
        init.d = 16;
        init.m = 32;
        init.heads = 2;
        init.head_dim = 8;
        init.kv_heads = 1;
        init.blocks = 2;
        init.max_seq_len = 32;
        init.seed = 3;
        init.init_std = 0.2;
        init.corpus = corpus;
        init.out = model;
        cmd_init(init);
    }

    SweepOptions sweep(std::vector<double> grid, const std::string& out) const {
        SweepOptions o;
        o.model = model;
        o.corpus = corpus;
        o.tasks = {TaskFile{"toy", task}};
        o.grid = std::move(grid);
        o.max_tokens = 512;
        o.out = dir / out;
        return o;
    }
};

std::string fingerprint(const fs::path& dir) {
    std::string all;
    for (const char* name : {kManifestName, kBlobName, kVocabName}) all += slurp(dir / name);
    return all;
}

}  // namespace

TEST_CASE("vocabulary") {
    const Vocabulary v = Vocabulary::from_text("hello h\xC3\xA9");
    CHECK(v.size() == 7);
    CHECK(v.symbols().front() == U'\0');
    CHECK(std::is_sorted(v.symbols().begin(), v.symbols().end()));
    const std::string text = "hol\xC3\xA9 leh";
    CHECK(v.decode(v.encode(text)) == text);

    std::size_t unknown = 0;
    const TokenSeq ids = v.encode("hxz", &unknown);
    CHECK(unknown == 2);
    CHECK(ids[1] == 0);
    CHECK(ids[2] == 0);
    CHECK(ids[0] != 0);

    const fs::path dir = scratch_dir("vocab");
    v.save(dir / "v.json");
    CHECK(Vocabulary::load(dir / "v.json").symbols() == v.symbols());
    write_text(dir / "bad.json", "[\"\\u0000\", \"b\", \"a\"]");
    CHECK_THROWS_AS(Vocabulary::load(dir / "bad.json"), ValidationError);
    write_text(dir / "bad2.json", "[\"a\", \"b\"]");
    CHECK_THROWS_AS(Vocabulary::load(dir / "bad2.json"), ValidationError);
    write_text(dir / "bad3.json", "[\"\\u0000\", \"ab\"]");
    CHECK_THROWS_AS(Vocabulary::load(dir / "bad3.json"), ValidationError);
    CHECK_THROWS_AS(utf8_decode("\xC3"), ValidationError);
}

TEST_CASE("model files round-trip bit-identically") {
    const fs::path dir = scratch_dir("model_io");
    const auto c = ModelConfig::make(16, 24, 2, 8, 1, 2, 11, 16);
    const ModelWeights w = testing::toy_model(c, 9);
    save_model(dir / "plain", w, c);
    const StoredModel back = load_model(dir / "plain");
    CHECK(back.weights == w);
    CHECK(back.config == c);
    CHECK_FALSE(back.slice.has_value());

    SUBCASE("sliced per-block models keep adapters and slice info") {
        SeededRng rng(1);
        std::vector<DenseMatrix> qs;
        for (std::size_t i = 0; i <= c.n_blocks; ++i) qs.push_back(random_orthogonal(16, rng));
        const RotationPlan plan = make_plan(RotationMode::per_block, qs);
        const SlicedModel sm =
            slice_model(apply_rotation(fold_norm_weights(w), c, plan), c, plan, validate_sparsity(16, 0.25));
        const SliceInfo info{0.25, 12, to_string(RotationMode::per_block)};
        save_model(dir / "sliced", sm.weights, sm.config, info);
        const StoredModel s = load_model(dir / "sliced");
        CHECK(s.weights == sm.weights);
        CHECK(s.config == sm.config);
        REQUIRE(s.slice.has_value());
        CHECK(*s.slice == info);
        CHECK(s.weights.blocks[0].adapter.has_value());
    }
    SUBCASE("corrupt blobs are rejected") {
        const std::string blob = slurp(dir / "plain" / kBlobName);
        write_text(dir / "plain" / kBlobName, blob.substr(0, blob.size() - 8));
        CHECK_THROWS_AS(load_model(dir / "plain"), ValidationError);
        write_text(dir / "plain" / kBlobName, blob + "x");
        CHECK_THROWS_AS(load_model(dir / "plain"), ValidationError);
        std::string nan_blob = blob;
        const auto bits = std::bit_cast<std::uint64_t>(std::nan(""));
        for (int k = 0; k < 8; ++k) nan_blob[static_cast<std::size_t>(k)] = static_cast<char>((bits >> (8 * k)) & 0xFF);
        write_text(dir / "plain" / kBlobName, nan_blob);
        CHECK_THROWS_AS(load_model(dir / "plain"), NumericalError);
    }
    CHECK_THROWS_AS(load_model(dir / "missing"), ValidationError);
}

TEST_CASE("init") {
    const fs::path dir = scratch_dir("init");
    InitOptions o;
    o.d = 32;
    o.m = 64;
    o.heads = 4;
    o.head_dim = 8;
    o.kv_heads = 2;
    o.blocks = 2;
    o.vocab = 96;
    o.seed = 1;
    o.out = dir / "a";
    const ModelConfig c = cmd_init(o);
    CHECK(c.vocab_size == 96);
    const StoredModel loaded = load_model(o.out);
    CHECK(loaded.config == c);
    CHECK(loaded.weights == init_model(c, 1));

    o.out = dir / "b";
    cmd_init(o);
    CHECK(slurp(dir / "a" / kBlobName) == slurp(dir / "b" / kBlobName));
    CHECK(slurp(dir / "a" / kManifestName) == slurp(dir / "b" / kManifestName));
    o.seed = 2;
    o.out = dir / "c";
    cmd_init(o);
    CHECK(slurp(dir / "a" / kBlobName) != slurp(dir / "c" / kBlobName));

    o.head_dim = 9;
    o.out = dir / "d";
    try {
        cmd_init(o);
        FAIL("head_dim 9 accepted");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("h_attn*h_dim = d") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(dir / "d" / kBlobName));
}

TEST_CASE("sweep") {
    const Fixture fx("sweep");

    SUBCASE("the unpruned baseline alone") {
        const SweepReport r = cmd_sweep(fx.sweep({0.0}, "base"));
        REQUIRE(r.records.size() == 1);
        const auto rows = parse_csv(slurp(fx.dir / "base.csv"));
        REQUIRE(rows.size() == 2);
        CHECK(rows[0] == std::vector<std::string>{"sparsity", "token_ppl", "log2_emb_ppl", "toy_acc", "y_ppl",
                                                  "y_acc_toy"});
        CHECK(std::stod(cell(rows, 1, "y_ppl")) == 1.0);
        CHECK(std::stod(cell(rows, 1, "y_acc_toy")) == 0.0);
        CHECK(fs::exists(fx.dir / "base.json"));
    }
    SUBCASE("records come out in ascending s whatever the input order") {
        auto opt = fx.sweep({0.5, 0.0, 0.25}, "order");
        const SweepReport r = cmd_sweep(opt);
        REQUIRE(r.records.size() == 3);
        CHECK(r.records[0].s == 0.0);
        CHECK(r.records[1].s == 0.25);
        CHECK(r.records[2].s == 0.5);
        CHECK(r.d_kept == std::vector<std::size_t>{16, 12, 8});
        const std::string csv = slurp(fx.dir / "order.csv");

        opt.parallel = false;
        opt.grid = {0.25, 0.5, 0.0};
        opt.out = fx.dir / "order_serial";
        cmd_sweep(opt);
        CHECK(slurp(fx.dir / "order_serial.csv") == csv);

        FitOptions f;
        f.csv = fx.dir / "order.csv";
        const FitReport ppl_fit = cmd_fit(f);
        CHECK(ppl_fit.fit.n_points == 3);
        f.metric = "toy";
        CHECK(cmd_fit(f).transform == "ln_acc_ratio");
    }
    SUBCASE("an inadmissible value stops the sweep before any work") {
        CHECK_THROWS_AS(cmd_sweep(fx.sweep({0.0, 0.3}, "bad")), ValidationError);
        CHECK_FALSE(fs::exists(fx.dir / "bad.csv"));
        CHECK_FALSE(fs::exists(fx.dir / "bad.json"));
    }
    SUBCASE("default grid") {
        CHECK(resolve_grid({}, 16) == std::vector<double>{0.0, 0.125, 0.25, 0.375, 0.5});
        CHECK(resolve_grid({}, 12) == std::vector<double>{0.0, 0.25, 0.5});
        CHECK(resolve_grid({0.5, 0.0, 0.5}, 8) == std::vector<double>{0.0, 0.5});
    }
}

TEST_CASE("slice, eval and sweep leave their inputs untouched") {
    const Fixture fx("no_mutation");
    const std::string model_before = fingerprint(fx.model);
    const std::string corpus_before = slurp(fx.corpus);
    const std::string task_before = slurp(fx.task);

    SliceOptions so;
    so.model = fx.model;
    so.corpus = fx.corpus;
    so.out = fx.dir / "sliced";
    so.s = 0.25;
    so.mode = RotationMode::per_block;
    const SliceInfo info = cmd_slice(so);
    CHECK(info.d_kept == 12);
    so.out = fx.model;
    CHECK_THROWS_AS(cmd_slice(so), ValidationError);

    EvalOptions eo;
    eo.model = fx.dir / "sliced";
    eo.corpus = fx.corpus;
    eo.tasks = {TaskFile{"toy", fx.task}};
    const EvalResult er = cmd_eval(eo);
    REQUIRE(er.ppl.has_value());
    CHECK(er.ppl->ppl >= 1.0);
    REQUIRE(er.accuracy.size() == 1);

    cmd_sweep(fx.sweep({0.0, 0.5}, "sw"));

    CHECK(fingerprint(fx.model) == model_before);
    CHECK(slurp(fx.corpus) == corpus_before);
    CHECK(slurp(fx.task) == task_before);
}

TEST_CASE("fit") {
    const fs::path dir = scratch_dir("fit");

    SUBCASE("law-exact perplexities") {
        std::string csv = "sparsity,token_ppl\n";
        for (double s : {0.0, 0.125, 0.25, 0.375, 0.5, 0.625}) csv += format_double(s) + "," +
                                                                       format_double(predict_ppl(10.0, s)) + "\n";
        write_text(dir / "law.csv", csv);
        FitOptions f;
        f.csv = dir / "law.csv";
        f.out = dir / "law.json";
        f.plot = dir / "law_plot.csv";
        const FitReport r = cmd_fit(f);
        CHECK(r.fit.a == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(r.fit.b == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.fit.rmse < 1e-9);
        const auto plot = parse_csv(slurp(dir / "law_plot.csv"));
        CHECK(plot[0] == std::vector<std::string>{"s", "y", "fitted"});
        CHECK(plot.size() == 7);
        CHECK(slurp(dir / "law.json") == r.json);
    }
    SUBCASE("check mode on law-plus-noise pairs") {
        const PaperCoefficients& row = paper_coefficients("llama3", "WikiText2");
        SeededRng rng(21);
        std::string csv = "s,y\n";
        for (int i = 0; i <= 8; ++i) {
            const double s = i / 16.0;
            csv += format_double(s) + "," + format_double(row.a * s + row.b + 0.004 * rng.gaussian()) + "\n";
        }
        write_text(dir / "pairs.csv", csv);
        FitOptions f;
        f.csv = dir / "pairs.csv";
        f.metric = "y";
        f.check = std::make_pair(std::string("llama3"), std::string("wikitext2"));
        const FitReport r = cmd_fit(f);
        CHECK(r.transform == "ln_ppl_ratio");
        REQUIRE(r.matches_paper.has_value());
        CHECK(*r.matches_paper);

        f.check = std::make_pair(std::string("phi3"), std::string("wikitext2"));
        CHECK_FALSE(*cmd_fit(f).matches_paper);
        f.check = std::make_pair(std::string("llama3"), std::string("arc-e"));
        f.transform = "ln_ppl_ratio";
        CHECK_THROWS_AS(cmd_fit(f), ValidationError);
    }
    SUBCASE("rejections") {
        write_text(dir / "one.csv", "sparsity\n0\n0.5\n");
        FitOptions f;
        f.csv = dir / "one.csv";
        try {
            cmd_fit(f);
            FAIL("single-column CSV accepted");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("usage") != std::string::npos);
        }
        write_text(dir / "nobase.csv", "sparsity,token_ppl\n0.25,12\n0.5,20\n");
        f.csv = dir / "nobase.csv";
        CHECK_THROWS_AS(cmd_fit(f), ValidationError);
        write_text(dir / "pairs.csv", "s,y\n0,1\n0.5,0.5\n");
        f.csv = dir / "pairs.csv";
        f.metric = "y";
        CHECK_THROWS_AS(cmd_fit(f), ValidationError);
    }
}

TEST_CASE("predict") {
    PredictOptions p;
    p.ppl0 = 8;
    p.s = 0.5;
    CHECK(cmd_predict(p).value == doctest::Approx(64).epsilon(1e-14));
    p.s = 1.0;
    CHECK_THROWS_AS(cmd_predict(p), ValidationError);
    p.s = 0.25;
    p.paper = std::make_pair(std::string("llama3"), std::string("arc-e"));
    CHECK_THROWS_AS(cmd_predict(p), ValidationError);

    PredictOptions q;
    q.acc0 = 0.8;
    q.s = 0.25;
    q.paper = std::make_pair(std::string("llama3"), std::string("arc-e"));
    const PredictResult r = cmd_predict(q);
    CHECK(std::abs(r.value - 0.48766) < 1e-5);
    CHECK_FALSE(r.above_one);

    q.paper = std::make_pair(std::string("gpt2"), std::string("arc-e"));
    try {
        cmd_predict(q);
        FAIL("unknown registry key accepted");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("PIQA") != std::string::npos);
    }
}

TEST_CASE("entropy") {
    EntropyOptions o;
    o.synthetic = parse_shape("64x256");
    o.grid = {0.5, 0.0, 0.25};
    o.seed = 5;
    const EntropyTable t = cmd_entropy(o);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].s == 0.0);
    CHECK(t.rows[0].ratio == 1.0);
    CHECK(t.rows[1].s == 0.25);
    CHECK(t.rows[2].s == 0.5);
    CHECK(std::abs(t.rows[2].ratio - 0.5) < 0.02);
    CHECK(t.csv.rfind("s,ratio,expected,abs_error\n", 0) == 0);
    CHECK(cmd_entropy(o).csv == t.csv);

    CHECK_THROWS_AS(parse_shape("64by256"), ValidationError);
    EntropyOptions none;
    CHECK_THROWS_AS(cmd_entropy(none), ValidationError);
    o.grid = {0.3};
    CHECK_THROWS_AS(cmd_entropy(o), ValidationError);
}

TEST_CASE("executable exit codes") {
    const fs::path dir = scratch_dir("exit_codes");
    CHECK(run_cli("predict --ppl0 8 --s 0.5") == 0);
    CHECK(run_cli("predict --ppl0 8 --s 1.0") == 2);
    CHECK(run_cli("init --d 32 --heads 4 --head-dim 9 --vocab 10 --out \"" + (dir / "m").string() + "\"") == 2);
    CHECK(run_cli("eval --model \"" + (dir / "missing").string() + "\"") == 2);
    CHECK(run_cli("predict --bogus") == 2);
    CHECK(run_cli("predict --ppl0 100 --s 0.999") == 3);
    CHECK(run_cli("--help") == 0);
}
