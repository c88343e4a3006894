#include "lazyllm/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "lazyllm/bench.hpp"
#include "lazyllm/engine.hpp"
#include "lazyllm/errors.hpp"
#include "lazyllm/io.hpp"
#include "lazyllm/model.hpp"
#include "lazyllm/pruning.hpp"
#include "lazyllm/tokenizer.hpp"

namespace lazyllm::cli {
namespace {

namespace fs = std::filesystem;

struct PolicyFlags {
    std::string policy = "baseline";
    std::string schedule;
    double drop_ratio = 0.5;
    std::size_t static_score_layer = 2;
    double static_keep_fraction = 0.5;
    std::uint64_t seed = 0;

    void attach(CLI::App* app, bool with_policy = true) {
        if (with_policy) app->add_option("--policy", policy, "baseline | lazy | random | static")->capture_default_str();
        app->add_option("--schedule", schedule, "lazy boundaries, layer:fraction[,layer:fraction]*");
        app->add_option("--drop-ratio", drop_ratio, "random policy drop ratio")->capture_default_str();
        app->add_option("--static-score-layer", static_score_layer, "static policy boundary layer")->capture_default_str();
        app->add_option("--static-keep-fraction", static_keep_fraction, "static policy keep fraction")->capture_default_str();
        app->add_option("--seed", seed, "random policy seed")->capture_default_str();
    }

    PruningSchedule build(const std::string& name) const {
        PruningSchedule s;
        s.policy = parse_policy(name);
        if (s.policy == Policy::lazy) s.boundaries = parse_schedule(schedule);
        else if (!schedule.empty()) parse_schedule(schedule);  // still reject malformed text
        s.drop_ratio = drop_ratio;
        s.static_score_layer = static_score_layer;
        s.static_keep_fraction = static_keep_fraction;
        s.seed = seed;
        return s;
    }
    PruningSchedule build() const { return build(policy); }
};

struct PromptFlags {
    std::string inline_text;
    std::string file;
    std::string corpus;

    void attach(CLI::App* app, bool allow_corpus) {
        auto* p = app->add_option("--prompt", inline_text, "inline prompt text");
        auto* f = app->add_option("--prompt-file", file, "file holding the prompt bytes");
        p->excludes(f);
        if (allow_corpus) {
            auto* c = app->add_option("--corpus", corpus, "directory of prompt files");
            c->excludes(p)->excludes(f);
        }
    }
};

std::vector<int> fit_prompt(std::vector<int> ids, const ModelConfig& cfg, std::size_t reserve, const std::string& name,
                            std::ostream& err) {
    const std::size_t limit = cfg.max_position > reserve ? cfg.max_position - reserve : 1;
    if (ids.size() > limit) {
        err << "warning: " << name << " has " << ids.size() << " tokens, keeping the last " << limit << '\n';
        ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(limit));
    }
    return ids;
}

std::string read_text(const fs::path& path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

std::vector<std::vector<int>> load_prompts(const PromptFlags& pf, const ModelConfig& cfg, std::size_t reserve,
                                           std::ostream& err) {
    std::vector<std::vector<int>> prompts;
    if (!pf.corpus.empty()) {
        if (!fs::is_directory(pf.corpus)) throw IoError("corpus directory not found: " + pf.corpus);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(pf.corpus)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) prompts.push_back(fit_prompt(tokenize(read_text(f)), cfg, reserve, f.string(), err));
        if (prompts.empty()) throw ConfigError("corpus directory is empty: " + pf.corpus);
    } else if (!pf.file.empty()) {
        prompts.push_back(fit_prompt(tokenize(read_text(pf.file)), cfg, reserve, pf.file, err));
    } else if (!pf.inline_text.empty()) {
        prompts.push_back(fit_prompt(tokenize(pf.inline_text), cfg, reserve, "prompt", err));
    } else {
        throw ConfigError("exactly one prompt source is required (--prompt, --prompt-file or --corpus)");
    }
    return prompts;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::stringstream is(item);
        T v{};
        if (!(is >> v) || !(is >> std::ws).eof()) throw ConfigError(std::string("bad ") + what + " list: " + text);
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
    return out;
}

std::vector<std::string> split_names(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transformer inference with dynamic progressive token pruning", "lazyllm"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "OpenMP threads for the kernels (0 = runtime default)");

    // gen-model
    ModelConfig gen_cfg;
    std::uint64_t gen_seed = 0;
    bool untied = false;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-model", "write a seeded random model in LZWT format");
    gen->add_option("--layers", gen_cfg.num_layers)->capture_default_str();
    gen->add_option("--heads", gen_cfg.num_heads)->capture_default_str();
    gen->add_option("--dim", gen_cfg.d_model)->capture_default_str();
    gen->add_option("--ff", gen_cfg.d_ff)->capture_default_str();
    gen->add_option("--vocab", gen_cfg.vocab_size)->capture_default_str();
    gen->add_option("--max-position", gen_cfg.max_position)->capture_default_str();
    gen->add_option("--seed", gen_seed)->capture_default_str();
    gen->add_flag("--untied", untied, "separate unembedding matrix");
    gen->add_option("--out", gen_out, "output path")->required();

    // run
    std::string model_path;
    PromptFlags run_prompt;
    PolicyFlags run_policy;
    std::size_t max_new = 32;
    bool stop_eos = false;
    std::string report_out;
    auto* run_cmd = app.add_subcommand("run", "generate once and write a JSON report");
    run_cmd->add_option("--model", model_path)->required();
    run_prompt.attach(run_cmd, false);
    run_policy.attach(run_cmd);
    run_cmd->add_option("--max-new-tokens", max_new)->capture_default_str();
    run_cmd->add_flag("--stop-eos", stop_eos, "stop at the EOS token");
    run_cmd->add_option("--out", report_out, "report JSON path");

    // bench
    PromptFlags bench_prompt;
    PolicyFlags bench_policy;
    std::string policies = "baseline,lazy,random,static";
    bench::BenchOptions bench_opts;
    std::string bench_json, bench_csv_path;
    auto* bench_cmd = app.add_subcommand("bench", "TTFT / generation speedup, percent computed and fidelity per policy");
    bench_cmd->add_option("--model", model_path)->required();
    bench_cmd->add_option("--corpus", bench_prompt.corpus, "directory of prompt files")->required();
    bench_cmd->add_option("--policies", policies)->capture_default_str();
    bench_policy.attach(bench_cmd, false);
    bench_cmd->add_option("--max-new-tokens", bench_opts.max_new_tokens)->capture_default_str();
    bench_cmd->add_option("--repeats", bench_opts.repeats)->capture_default_str();
    bench_cmd->add_option("--warmup", bench_opts.warmup)->capture_default_str();
    bench_cmd->add_option("--out-json", bench_json);
    bench_cmd->add_option("--out-csv", bench_csv_path);

    // sweep
    PromptFlags sweep_prompt;
    std::string sweep_layers = "2,4,6,8,10";
    std::string sweep_fractions = "1.0,0.7,0.4,0.1";
    bench::SweepOptions sweep_opts;
    std::string sweep_out;
    auto* sweep_cmd = app.add_subcommand("sweep", "single-boundary pruning location / ratio grid");
    sweep_cmd->add_option("--model", model_path)->required();
    sweep_cmd->add_option("--corpus", sweep_prompt.corpus, "directory of prompt files")->required();
    sweep_cmd->add_option("--layers", sweep_layers)->capture_default_str();
    sweep_cmd->add_option("--fractions", sweep_fractions)->capture_default_str();
    sweep_cmd->add_option("--max-new-tokens", sweep_opts.max_new_tokens)->capture_default_str();
    sweep_cmd->add_option("--repeats", sweep_opts.repeats)->capture_default_str();
    sweep_cmd->add_option("--warmup", sweep_opts.warmup)->capture_default_str();
    sweep_cmd->add_option("--out", sweep_out, "CSV path");

    // profile
    PromptFlags profile_prompt;
    std::size_t bins = 20;
    std::string thresholds;
    std::string profile_out;
    auto* profile_cmd = app.add_subcommand("profile", "attention score histograms for the first token");
    profile_cmd->add_option("--model", model_path)->required();
    profile_prompt.attach(profile_cmd, false);
    profile_cmd->add_option("--bins", bins)->capture_default_str();
    profile_cmd->add_option("--thresholds", thresholds, "comma-separated score thresholds");
    profile_cmd->add_option("--out", profile_out, "CSV path");

    // verify
    PromptFlags verify_prompt;
    PolicyFlags verify_policy;
    std::size_t verify_new = 8;
    auto* verify_cmd = app.add_subcommand("verify", "check cache and ledger invariants after every step");
    verify_cmd->add_option("--model", model_path)->required();
    verify_prompt.attach(verify_cmd, true);
    verify_policy.attach(verify_cmd);
    verify_cmd->add_option("--max-new-tokens", verify_new)->capture_default_str();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }

    try {
        set_kernel_threads(threads);
        if (*gen) {
            gen_cfg.tied_embeddings = !untied;
            const Model model = generate_random_model(gen_cfg, gen_seed);
            save_model(model, gen_out);
            out << "wrote " << gen_out << '\n';
            return kOk;
        }

        const Model model = load_model(model_path);

        if (*run_cmd) {
            const PruningSchedule schedule = run_policy.build();
            const auto prompts = load_prompts(run_prompt, model.config(), max_new, err);
            std::vector<int> stops;
            if (stop_eos) stops.push_back(kEosId);
            GenerationSession session(model, schedule);
            const bench::GenerationReport report = session.generate(prompts.front(), max_new, stops);
            if (!report_out.empty()) write_file_atomic(report_out, bench::to_json(report).dump(2) + "\n");
            out << detokenize(report.generated_ids, static_cast<int>(model.config().vocab_size)) << '\n';
            err << "percent_prompt_tokens_computed " << report.percent_prompt_tokens_computed << " ttft_seconds "
                << report.ttft_seconds << '\n';
            return kOk;
        }

        if (*bench_cmd) {
            std::vector<PruningSchedule> schedules;
            for (const std::string& name : split_names(policies)) {
                PruningSchedule s = bench_policy.build(name);
                validate_schedule(s, model.config());
                schedules.push_back(s);
            }
            const auto corpus = load_prompts(bench_prompt, model.config(), bench_opts.max_new_tokens, err);
            const bench::BenchSummary summary = bench::run_benchmark(model, corpus, schedules, bench_opts);
            const std::string csv = bench::bench_csv(summary);
            if (!bench_json.empty()) write_file_atomic(bench_json, bench::to_json(summary).dump(2) + "\n");
            if (!bench_csv_path.empty()) write_file_atomic(bench_csv_path, csv);
            out << csv;
            return kOk;
        }

        if (*sweep_cmd) {
            const auto layers = parse_list<std::size_t>(sweep_layers, "layer");
            const auto fractions = parse_list<double>(sweep_fractions, "fraction");
            const auto corpus = load_prompts(sweep_prompt, model.config(), sweep_opts.max_new_tokens, err);
            const std::string csv = bench::sweep_csv(bench::run_sweep(model, corpus, layers, fractions, sweep_opts));
            if (!sweep_out.empty()) write_file_atomic(sweep_out, csv);
            out << csv;
            return kOk;
        }

        if (*profile_cmd) {
            std::vector<double> th;
            if (!thresholds.empty()) th = parse_list<double>(thresholds, "threshold");
            const auto prompts = load_prompts(profile_prompt, model.config(), 1, err);
            const bench::AttentionProfile profile = bench::attention_profile(model, prompts.front(), bins, th);
            const std::string csv = bench::profile_csv(profile);
            if (!profile_out.empty()) write_file_atomic(profile_out, csv);
            out << csv;
            for (const auto& lp : profile.layers) {
                err << "layer " << lp.layer << " fraction_below_uniform " << lp.fraction_below_uniform << '\n';
            }
            return kOk;
        }

        if (*verify_cmd) {
            const PruningSchedule schedule = verify_policy.build();
            const auto prompts = load_prompts(verify_prompt, model.config(), verify_new, err);
            std::size_t steps = 0;
            std::size_t revivals = 0;
            std::vector<std::string> violations;
            for (const auto& prompt : prompts) {
                const bench::VerifyReport vr = bench::verify_generation(model, prompt, schedule, verify_new);
                steps += vr.steps_checked;
                revivals += vr.revivals;
                violations.insert(violations.end(), vr.violations.begin(), vr.violations.end());
            }
            for (const auto& v : violations) err << "violation: " << v << '\n';
            out << "prompts " << prompts.size() << " steps " << steps << " revivals " << revivals << " violations "
                << violations.size() << '\n';
            return violations.empty() ? kOk : kInvariant;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const InputError& e) {
        err << "input error: " << e.what() << '\n';
        return kUsage;
    } catch (const InvariantViolation& e) {
        err << "invariant violation: " << e.what() << '\n';
        return kInvariant;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace lazyllm::cli
