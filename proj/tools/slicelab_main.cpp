// SPDX-License-Identifier: Apache-2.0
//
// slicelab: train a toy transformer, slice its residual stream, sweep
// sparsity levels and fit the resulting sparsity laws.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "slicelab/commands.hpp"
#include "slicelab/error.hpp"

namespace {

using namespace slicelab;
using namespace slicelab::cli;

std::optional<std::pair<std::string, std::string>> pair_of(const std::vector<std::string>& v) {
    if (v.empty()) return std::nullopt;
    return std::make_pair(v.at(0), v.at(1));
}

std::vector<TaskFile> tasks_of(const std::vector<std::string>& args) {
    std::vector<TaskFile> out;
    for (const auto& a : args) out.push_back(parse_task_arg(a));
    return out;
}

void add_calibration_flags(CLI::App* cmd, CalibrationOptions& cal, std::string& cal_corpus) {
    cmd->add_option("--calib-corpus", cal_corpus, "Calibration text (defaults to --corpus)");
    cmd->add_option("--calib-count", cal.count, "Number of calibration windows")->capture_default_str();
    cmd->add_option("--calib-len", cal.length, "Calibration window length (0: max_seq_len)")->capture_default_str();
    cmd->add_option("--calib-seed", cal.seed, "Seed for calibration sampling")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"slicelab: representation-dimension slicing of a toy transformer"};
    app.require_subcommand(1);

    InitOptions init;
    std::string init_out, init_corpus;
    auto* c_init = app.add_subcommand("init", "Create a freshly initialized model directory");
    c_init->add_option("--d", init.d, "Residual width")->capture_default_str();
    c_init->add_option("--m", init.m, "MLP width")->capture_default_str();
    c_init->add_option("--heads", init.heads, "Query heads")->capture_default_str();
    c_init->add_option("--head-dim", init.head_dim, "Head width")->capture_default_str();
    c_init->add_option("--kv-heads", init.kv_heads, "Key/value heads")->capture_default_str();
    c_init->add_option("--blocks", init.blocks, "Transformer blocks")->capture_default_str();
    c_init->add_option("--vocab", init.vocab, "Vocabulary size (default: from --corpus)");
    c_init->add_option("--max-seq-len", init.max_seq_len, "Context length")->capture_default_str();
    c_init->add_option("--seed", init.seed, "Initialization seed")->capture_default_str();
    c_init->add_option("--init-std", init.init_std, "Stddev of projection weights")->capture_default_str();
    c_init->add_option("--corpus", init_corpus, "Text that defines the character vocabulary");
    c_init->add_option("--out", init_out, "Output model directory")->required();

    TrainOptions tr;
    std::string tr_model, tr_corpus, tr_out, tr_loss, tr_opt = "adam";
    auto* c_train = app.add_subcommand("train", "Train a model on a text corpus");
    c_train->add_option("--model", tr_model, "Input model directory")->required();
    c_train->add_option("--corpus", tr_corpus, "Training text")->required();
    c_train->add_option("--out", tr_out, "Output model directory")->required();
    c_train->add_option("--steps", tr.train.steps, "Optimizer steps")->capture_default_str();
    c_train->add_option("--lr", tr.train.learning_rate, "Learning rate")->capture_default_str();
    c_train->add_option("--batch-len", tr.train.batch_len, "Tokens per step")->capture_default_str();
    c_train->add_option("--seed", tr.train.seed, "Window sampling seed")->capture_default_str();
    c_train->add_option("--optimizer", tr_opt, "adam or sgd")->capture_default_str();
    c_train->add_option("--loss-csv", tr_loss, "Write the loss curve (step,loss)");

    SliceOptions sl;
    std::string sl_model, sl_corpus, sl_out, sl_mode = "global", sl_cal;
    auto* c_slice = app.add_subcommand("slice", "Rotate and slice a model at one sparsity");
    c_slice->add_option("--model", sl_model, "Input model directory")->required();
    c_slice->add_option("--corpus", sl_corpus, "Calibration text")->required();
    c_slice->add_option("--out", sl_out, "Output model directory")->required();
    c_slice->add_option("--s", sl.s, "Sparsity")->required();
    c_slice->add_option("--mode", sl_mode, "global or per-block")->capture_default_str();
    add_calibration_flags(c_slice, sl.calibration, sl_cal);

    EvalOptions ev;
    std::string ev_model, ev_corpus, ev_out;
    std::vector<std::string> ev_tasks;
    auto* c_eval = app.add_subcommand("eval", "Token perplexity and multiple-choice accuracy");
    c_eval->add_option("--model", ev_model, "Model directory")->required();
    c_eval->add_option("--corpus", ev_corpus, "Evaluation text");
    c_eval->add_option("--task", ev_tasks, "Multiple-choice task file, name=path")->take_all();
    c_eval->add_option("--max-tokens", ev.max_tokens, "Evaluate at most this many tokens (0: all)");
    c_eval->add_option("--out", ev_out, "Write the result JSON here");

    SweepOptions sw;
    std::string sw_model, sw_corpus, sw_out, sw_mode = "global", sw_cal;
    std::vector<std::string> sw_tasks;
    bool sw_serial = false;
    auto* c_sweep = app.add_subcommand("sweep", "Evaluate a model over a sparsity grid");
    c_sweep->add_option("--model", sw_model, "Unsliced model directory")->required();
    c_sweep->add_option("--corpus", sw_corpus, "Evaluation text")->required();
    c_sweep->add_option("--task", sw_tasks, "Multiple-choice task file, name=path")->take_all();
    c_sweep->add_option("--grid", sw.grid, "Comma-separated sparsities")->delimiter(',');
    c_sweep->add_option("--mode", sw_mode, "global or per-block")->capture_default_str();
    c_sweep->add_option("--max-tokens", sw.max_tokens, "Evaluate at most this many tokens (0: all)");
    c_sweep->add_flag("--serial", sw_serial, "Evaluate grid points one after another");
    c_sweep->add_option("--out", sw_out, "Output prefix; writes <out>.csv and <out>.json")->required();
    add_calibration_flags(c_sweep, sw.calibration, sw_cal);

    FitOptions fit;
    std::string fit_csv, fit_out, fit_plot, fit_transform;
    std::vector<std::string> fit_check;
    auto* c_fit = app.add_subcommand("fit", "Fit y = a*s + b to sweep output");
    c_fit->add_option("--csv", fit_csv, "Sweep CSV (or s,y pairs)")->required();
    c_fit->add_option("--metric", fit.metric, "ppl, a task name, or y")->capture_default_str();
    c_fit->add_option("--transform", fit_transform, "ln_ppl_ratio or ln_acc_ratio (for --metric y)");
    c_fit->add_option("--check", fit_check, "Compare with a published fit: <model> <dataset>")->expected(2);
    c_fit->add_option("--out", fit_out, "Write the fit JSON here");
    c_fit->add_option("--plot", fit_plot, "Write plot data (s,y,fitted) here");

    PredictOptions pr;
    std::vector<std::string> pr_paper;
    std::string pr_out;
    auto* c_predict = app.add_subcommand("predict", "Predict perplexity or accuracy at a sparsity");
    auto* o_ppl0 = c_predict->add_option("--ppl0", "Unpruned perplexity");
    auto* o_acc0 = c_predict->add_option("--acc0", "Unpruned accuracy");
    c_predict->add_option("--s", pr.s, "Sparsity")->required();
    c_predict->add_option("--paper", pr_paper, "Published coefficients: <model> <dataset>")->expected(2);
    auto* o_a = c_predict->add_option("--a", "Slope");
    auto* o_b = c_predict->add_option("--b", "Intercept");
    c_predict->add_option("--out", pr_out, "Write the prediction JSON here");

    EntropyOptions en;
    std::string en_synth, en_matrix, en_model, en_corpus, en_out;
    auto* c_entropy = app.add_subcommand("entropy", "Entropy ratio of column-sliced embeddings");
    c_entropy->add_option("--synthetic", en_synth, "Gaussian matrix of shape RxC");
    c_entropy->add_option("--matrix", en_matrix, "Numeric CSV matrix");
    c_entropy->add_option("--model", en_model, "Model directory (final hidden states)");
    c_entropy->add_option("--corpus", en_corpus, "Text fed to --model");
    c_entropy->add_option("--max-tokens", en.max_tokens, "Tokens fed to --model")->capture_default_str();
    c_entropy->add_option("--grid", en.grid, "Comma-separated sparsities")->delimiter(',');
    c_entropy->add_option("--seed", en.seed, "Seed for --synthetic")->capture_default_str();
    c_entropy->add_option("--out", en_out, "Write the CSV here (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };

    try {
        if (c_init->parsed()) {
            init.out = init_out;
            init.corpus = opt_path(init_corpus);
            const ModelConfig c = cmd_init(init);
            std::printf("wrote %s (d=%zu, blocks=%zu, vocab=%zu)\n", init_out.c_str(), c.d, c.n_blocks,
                        c.vocab_size);
        } else if (c_train->parsed()) {
            tr.model = tr_model;
            tr.corpus = tr_corpus;
            tr.out = tr_out;
            tr.loss_csv = opt_path(tr_loss);
            tr.train.optimizer = parse_optimizer(tr_opt);
            const auto losses = cmd_train(tr);
            std::printf("trained %zu steps, final loss %s\n", losses.size(), format_double(losses.back()).c_str());
        } else if (c_slice->parsed()) {
            sl.model = sl_model;
            sl.corpus = sl_corpus;
            sl.out = sl_out;
            sl.mode = parse_rotation_mode(sl_mode);
            sl.calibration.corpus = opt_path(sl_cal);
            const SliceInfo info = cmd_slice(sl);
            std::printf("wrote %s (s=%s, d_kept=%zu, mode=%s)\n", sl_out.c_str(), format_double(info.s).c_str(),
                        info.d_kept, info.mode.c_str());
        } else if (c_eval->parsed()) {
            ev.model = ev_model;
            ev.corpus = opt_path(ev_corpus);
            ev.tasks = tasks_of(ev_tasks);
            ev.out = opt_path(ev_out);
            std::cout << to_json(cmd_eval(ev));
        } else if (c_sweep->parsed()) {
            sw.model = sw_model;
            sw.corpus = sw_corpus;
            sw.tasks = tasks_of(sw_tasks);
            sw.mode = parse_rotation_mode(sw_mode);
            sw.calibration.corpus = opt_path(sw_cal);
            sw.parallel = !sw_serial;
            sw.out = sw_out;
            const SweepReport report = cmd_sweep(sw);
            std::cout << sweep_csv(report, sw.tasks);
        } else if (c_fit->parsed()) {
            fit.csv = fit_csv;
            if (!fit_transform.empty()) fit.transform = fit_transform;
            fit.check = pair_of(fit_check);
            fit.out = opt_path(fit_out);
            fit.plot = opt_path(fit_plot);
            std::cout << cmd_fit(fit).json;
        } else if (c_predict->parsed()) {
            if (*o_ppl0) pr.ppl0 = o_ppl0->as<double>();
            if (*o_acc0) pr.acc0 = o_acc0->as<double>();
            if (*o_a) pr.a = o_a->as<double>();
            if (*o_b) pr.b = o_b->as<double>();
            pr.paper = pair_of(pr_paper);
            pr.out = opt_path(pr_out);
            std::cout << cmd_predict(pr).json;
        } else if (c_entropy->parsed()) {
            if (!en_synth.empty()) en.synthetic = parse_shape(en_synth);
            en.matrix_csv = opt_path(en_matrix);
            en.model = opt_path(en_model);
            en.corpus = opt_path(en_corpus);
            en.out = opt_path(en_out);
            const EntropyTable table = cmd_entropy(en);
            if (!en.out) std::cout << table.csv;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
