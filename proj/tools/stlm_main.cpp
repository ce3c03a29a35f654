#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stlm/audit.hpp"
#include "stlm/checkpoint.hpp"
#include "stlm/eval.hpp"
#include "stlm/generate.hpp"
#include "stlm/train.hpp"

namespace {

using namespace stlm;

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// defaults <- config file <- STLM_SEED <- command-line overrides
RunConfig resolve_config(const std::string& config_path, std::vector<std::string> overrides) {
    std::vector<std::string> all;
    if (const char* env_seed = std::getenv("STLM_SEED"))
        all.push_back(std::string("train.seed=") + env_seed);
    for (auto& o : overrides) all.push_back(std::move(o));
    return load_config(config_path, all);
}

MergeTable merges_for(const std::string& explicit_path, const RunConfig& cfg) {
    const std::string& path = explicit_path.empty() ? cfg.paths.merges : explicit_path;
    if (path.empty()) return MergeTable{}; // pure byte vocabulary
    return load_merges(path);
}

// The pooling chunk cap always covers the tokenizer's longest token.
void fit_bytepool_to_merges(RunConfig& cfg, const MergeTable& merges) {
    cfg.bytepool.max_token_bytes = std::max(cfg.bytepool.max_token_bytes, merges.max_token_bytes());
}

int cmd_tokenizer_train(const std::string& input, int vocab_size, const std::string& out) {
    std::string corpus;
    namespace fs = std::filesystem;
    if (fs::is_directory(input)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) corpus += read_text_file(f.string());
    } else {
        corpus = read_text_file(input);
    }
    auto merges = train_bpe(corpus, vocab_size);
    save_merges(merges, out);
    std::cout << "trained " << merges.merges.size() << " merges (vocab " << merges.vocab_size()
              << ", longest token " << merges.max_token_bytes() << " bytes) -> " << out << "\n";
    return 0;
}

int cmd_audit(const std::string& config_path, std::vector<std::string> overrides, bool as_json) {
    auto cfg = resolve_config(config_path, std::move(overrides));
    auto report = count_params(cfg.model, cfg.bytepool);
    std::cout << render_report(report, as_json ? ReportFormat::json : ReportFormat::text);
    return 0;
}

int cmd_train(const std::string& config_path, std::vector<std::string> overrides,
              const std::string& resume_path, const std::string& metrics_override) {
    auto cfg = resolve_config(config_path, std::move(overrides));
    if (!metrics_override.empty()) cfg.paths.metrics = metrics_override;
    if (cfg.paths.corpus.empty()) throw ConfigError("train: paths.corpus is required");

    Checkpoint resume;
    if (!resume_path.empty()) {
        resume = read_checkpoint(resume_path);
        auto paths = cfg.paths;
        cfg = resume.config;
        cfg.paths = paths; // current paths win; architecture comes from the checkpoint
    }

    auto merges = merges_for("", cfg);
    fit_bytepool_to_merges(cfg, merges);
    auto corpus = load_corpus(cfg.paths.corpus, merges, cfg.train.val_fraction);

    std::filesystem::create_directories(cfg.paths.checkpoint_dir);
    {
        std::ofstream resolved(std::filesystem::path(cfg.paths.checkpoint_dir) / "resolved_config.json");
        resolved << dump_config(cfg);
    }
    std::ofstream metrics(cfg.paths.metrics, std::ios::app);
    if (!metrics) throw DataError("cannot open metrics file " + cfg.paths.metrics);

    Trainer trainer(cfg, merges, corpus);
    if (!resume_path.empty()) trainer.restore(resume);

    std::cout << "training " << to_string(cfg.model.embedder) << " model, "
              << count_params(cfg.model, cfg.bytepool).total << " params, iters "
              << trainer.iteration() << ".." << cfg.train.total_iters << "\n";

    while (!trainer.done()) {
        auto m = trainer.step();
        const bool boundary = m.iter % cfg.train.checkpoint_every == 0 || m.iter == cfg.train.total_iters;
        if (boundary) {
            m.val_byte_ppl = trainer.validation_byte_ppl();
            const auto name = std::filesystem::path(cfg.paths.checkpoint_dir) /
                              ("ckpt-" + std::to_string(m.iter) + ".stlm");
            write_checkpoint(name.string(), trainer.checkpoint());
            write_checkpoint((std::filesystem::path(cfg.paths.checkpoint_dir) / "latest.stlm").string(),
                             trainer.checkpoint());
        }
        const auto line = metrics_to_jsonl(m);
        metrics << line << "\n";
        metrics.flush();
        std::cout << line << "\n";
    }
    return 0;
}

struct LoadedModel {
    RunConfig cfg;
    MergeTable merges;
    std::unique_ptr<Transformer<float>> model;
};

LoadedModel load_model(const std::string& checkpoint_path, const std::string& merges_path) {
    auto cp = read_checkpoint(checkpoint_path);
    LoadedModel out;
    out.cfg = cp.config;
    out.merges = merges_for(merges_path, out.cfg);
    fit_bytepool_to_merges(out.cfg, out.merges);
    out.model = std::make_unique<Transformer<float>>(out.cfg.model, out.cfg.bytepool, out.cfg.train.seed);
    restore_checkpoint(cp, out.model->params(), nullptr);
    return out;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& text_path,
             const std::string& merges_path) {
    auto loaded = load_model(checkpoint_path, merges_path);
    const auto text = read_text_file(text_path);
    TransformerScorer scorer(*loaded.model, loaded.merges);
    EvalReport report;
    report.model_id = checkpoint_path;
    report.byte_perplexity = byte_perplexity(scorer, text);
    report.text_bytes = text.size();
    std::cout << report.to_json();
    return 0;
}

int cmd_eval_mc(const std::string& checkpoint_path, const std::string& items_path,
                const std::string& merges_path) {
    auto loaded = load_model(checkpoint_path, merges_path);
    auto items = read_mc_items(items_path);
    if (items.empty()) throw DataError("no mc items in " + items_path);
    TransformerScorer scorer(*loaded.model, loaded.merges);
    auto result = score_mc(scorer, items);
    EvalReport report;
    report.model_id = checkpoint_path;
    report.mc_accuracy = result.accuracy;
    report.mc_accuracy_normalized = result.accuracy_normalized;
    report.mc_items = items.size();
    std::cout << report.to_json();
    return 0;
}

int cmd_generate(const std::string& checkpoint_path, const std::string& merges_path,
                 const std::string& prompt, int max_new_bytes, double temperature, bool greedy,
                 std::uint64_t seed) {
    auto loaded = load_model(checkpoint_path, merges_path);
    const auto text =
        generate_text(*loaded.model, loaded.merges, prompt, max_new_bytes, temperature, seed, greedy);
    std::cout << prompt << text << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"super tiny language model laboratory"};
    app.require_subcommand(1);

    std::string config_path, input, out, text_path, items_path, checkpoint_path, merges_path;
    std::string resume_path, metrics_path, prompt;
    std::vector<std::string> overrides;
    int vocab_size = 50257;
    int max_new_bytes = 256;
    double temperature = 1.0;
    bool greedy = false;
    bool as_json = false;
    std::uint64_t seed = 0;
    bool seed_given = false;

    auto* tok = app.add_subcommand("tokenizer-train", "train a byte-level BPE merge table");
    tok->add_option("--input", input, "corpus file or directory")->required();
    tok->add_option("--vocab-size", vocab_size, "total symbol count (>= 256)")->required();
    tok->add_option("--out", out, "merge table output path")->required();

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "base config JSON");
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_option("--metrics", metrics_path, "metrics JSONL path (overrides paths.metrics)");
    train->add_option("overrides", overrides, "dotted key=value config overrides");

    auto* audit = app.add_subcommand("audit", "exact parameter accounting for a config");
    audit->add_option("--config", config_path, "base config JSON");
    audit->add_flag("--json", as_json, "emit JSON instead of text");
    audit->add_option("overrides", overrides, "dotted key=value config overrides");

    auto* eval = app.add_subcommand("eval", "byte-normalized perplexity of a text file");
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval->add_option("--text", text_path, "UTF-8 or raw-byte text file")->required();
    eval->add_option("--merges", merges_path, "merge table (default: from checkpoint config)");

    auto* evalmc = app.add_subcommand("eval-mc", "multiple-choice accuracy via path probabilities");
    evalmc->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    evalmc->add_option("--items", items_path, "JSONL items: {context, options[], gold}")->required();
    evalmc->add_option("--merges", merges_path, "merge table (default: from checkpoint config)");

    auto* gen = app.add_subcommand("generate", "sample text from a checkpoint");
    gen->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    gen->add_option("--merges", merges_path, "merge table (default: from checkpoint config)");
    gen->add_option("--prompt", prompt, "prompt text (default empty: start from BOS)");
    gen->add_option("--max-new-bytes", max_new_bytes, "generation budget in bytes");
    gen->add_option("--temperature", temperature, "softmax temperature");
    gen->add_flag("--greedy", greedy, "deterministic argmax decoding");
    auto* seed_opt = gen->add_option("--seed", seed, "sampling seed");

    CLI11_PARSE(app, argc, argv);
    seed_given = seed_opt->count() > 0;

    try {
        if (tok->parsed()) return cmd_tokenizer_train(input, vocab_size, out);
        if (train->parsed()) return cmd_train(config_path, overrides, resume_path, metrics_path);
        if (audit->parsed()) return cmd_audit(config_path, overrides, as_json);
        if (eval->parsed()) return cmd_eval(checkpoint_path, text_path, merges_path);
        if (evalmc->parsed()) return cmd_eval_mc(checkpoint_path, items_path, merges_path);
        if (gen->parsed()) {
            if (!seed_given) {
                if (const char* env_seed = std::getenv("STLM_SEED"))
                    seed = std::strtoull(env_seed, nullptr, 10);
            }
            return cmd_generate(checkpoint_path, merges_path, prompt, max_new_bytes, temperature,
                                greedy, seed);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
