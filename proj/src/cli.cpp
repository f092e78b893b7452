// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The desta Authors

#include "desta/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "desta/adapter/train.hpp"
#include "desta/description.hpp"
#include "desta/error.hpp"
#include "desta/eval.hpp"
#include "desta/forge.hpp"
#include "desta/mock_backend.hpp"
#include "desta/probe.hpp"
#include "desta/prompt_pool.hpp"
#include "desta/remote_backend.hpp"

namespace desta::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kDefaultWeights = "speech=0.77,sound=0.14,music=0.07";

struct RemoteOptions {
    std::string endpoint;
    std::string model;
    std::string api_token;
    std::string replay;
    int max_attempts = 5;
    int backoff_ms = 500;
    std::size_t max_in_flight = 8;
    std::int64_t token_budget = 0; // 0 = unlimited
    int timeout_s = 120;
};

struct DecodingOptions {
    double temperature = 0.05;
    double top_p = 1.0;
    std::int64_t max_new_tokens = 512;
    std::string system_prompt;
};

struct ForgeArgs {
    std::string metadata;
    std::string pool;
    std::string backend = "mock";
    std::uint64_t seed = 0;
    std::string weights = kDefaultWeights;
    std::int64_t prompts_per_pair = 1;
    bool distinct_prompts = false;
    std::string out;
    std::size_t parallelism = 1;
    std::size_t shard_size = forge::kDefaultShardSize;
    double max_deadletter_fraction = 0.01;
    bool resume = false;
    std::size_t stop_after = 0; // test hook
    RemoteOptions remote;
    DecodingOptions decoding;
};

struct ProbeArgs {
    std::string scorer = "mock";
    std::vector<std::string> datasets;
    std::string out;
    std::size_t parallelism = 1;
    RemoteOptions remote;
};

struct TrainArgs {
    std::string fixture;
    std::string dims = "d=16,dp=16,N=4,B=2,H=2";
    adapter::TrainConfig train;
    std::string out;
};

struct GradCheckArgs {
    std::uint64_t seed = 7;
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    double inject = 0.0; // test hook
};

struct EvalArgs {
    std::string responses;
    double backbone_ifrate = 0.0;
    std::string baseline;
    std::string out;
    bool choice_extractor = false;
};

struct ValidateArgs {
    std::string metadata;
    std::string pool;
    std::string shard;
};

using Logger = std::shared_ptr<spdlog::logger>;

struct Context {
    std::ostream& out;
    Logger log;
    ojson config;
    std::optional<std::string> api_token;
};

// ---------------------------------------------------------------------------

adapter::AdapterDims parse_dims(const std::string& text) {
    adapter::AdapterDims dims;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw CLI::ValidationError("--dims", "expected key=value, got '" + item + "'");
        }
        std::string key = item.substr(0, eq);
        int value = 0;
        try {
            std::size_t used = 0;
            value = std::stoi(item.substr(eq + 1), &used);
            if (used != item.size() - eq - 1 || value < 1) {
                throw std::invalid_argument(item);
            }
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--dims", "'" + item + "' needs a positive integer");
        }
        if (!seen.insert(key).second) {
            throw CLI::ValidationError("--dims", "duplicate key '" + key + "'");
        }
        if (key == "d") {
            dims.d = value;
        } else if (key == "dp") {
            dims.d_out = value;
        } else if (key == "N") {
            dims.queries = value;
        } else if (key == "B") {
            dims.blocks = value;
        } else if (key == "H") {
            dims.heads = value;
        } else {
            throw CLI::ValidationError("--dims", "unknown key '" + key + "' (use d, dp, N, B, H)");
        }
    }
    if (dims.d % dims.heads != 0) {
        throw CLI::ValidationError("--dims", "H must divide d");
    }
    return dims;
}

std::string dims_validator(const std::string& text) {
    try {
        parse_dims(text);
    } catch (const CLI::ValidationError& e) {
        return e.what();
    }
    return {};
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << text;
        if (!out) {
            throw Error(ErrorKind::Io, "cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

void add_remote_options(CLI::App* app, RemoteOptions& r) {
    const char* group = "Remote backend";
    app->add_option("--endpoint", r.endpoint, "Base URL of a chat-completions server, e.g. http://host:8000/v1")
        ->group(group);
    app->add_option("--model", r.model, "Served model name")->group(group);
    app->add_option("--api-token", r.api_token, "Bearer token (DESTA_API_TOKEN overrides)")->group(group);
    app->add_option("--replay", r.replay, "Answer requests from a recorded fixture instead of the network")
        ->check(CLI::ExistingFile)
        ->group(group);
    app->add_option("--max-attempts", r.max_attempts, "Tries per request")->check(CLI::Range(1, 100))->group(group);
    app->add_option("--backoff-ms", r.backoff_ms, "Backoff base in milliseconds")
        ->check(CLI::NonNegativeNumber)
        ->group(group);
    app->add_option("--max-in-flight", r.max_in_flight, "Concurrent request limit")
        ->check(CLI::PositiveNumber)
        ->group(group);
    app->add_option("--token-budget", r.token_budget, "Stop once this many tokens were used (0 = no limit)")
        ->check(CLI::NonNegativeNumber)
        ->group(group);
    app->add_option("--timeout-s", r.timeout_s, "Per-request timeout")->check(CLI::PositiveNumber)->group(group);
}

/// "mock", "mock:<seed>", "uniform:<V>" or "remote".
std::unique_ptr<llm::GenerationBackend> make_backend(const std::string& spec, const RemoteOptions& r,
                                                     const Context& ctx) {
    auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    auto number = [&](const char* what) -> std::uint64_t {
        try {
            std::size_t used = 0;
            auto v = std::stoull(arg, &used);
            if (used == arg.size()) {
                return v;
            }
        } catch (const std::logic_error&) {
        }
        throw Error(ErrorKind::Config, std::string("backend '") + spec + "': " + what + " must be an integer");
    };
    if (kind == "mock") {
        return std::make_unique<llm::MockBackend>(arg.empty() ? 0 : number("seed"));
    }
    if (kind == "uniform") {
        return std::make_unique<llm::UniformBackend>(static_cast<int>(number("vocabulary size")));
    }
    if (kind == "remote" && arg.empty()) {
        if (r.model.empty()) {
            throw Error(ErrorKind::Config, "remote backend needs --model");
        }
        std::shared_ptr<llm::HttpTransport> transport;
        if (!r.replay.empty()) {
            transport = std::make_shared<llm::ReplayTransport>(r.replay);
        } else if (!r.endpoint.empty()) {
            transport = std::make_shared<llm::HttplibTransport>(r.endpoint, ctx.api_token,
                                                                std::chrono::seconds(r.timeout_s));
        } else {
            throw Error(ErrorKind::Config, "remote backend needs --endpoint or --replay");
        }
        llm::RemoteConfig rc;
        rc.model = r.model;
        rc.max_attempts = r.max_attempts;
        rc.backoff_base = std::chrono::milliseconds(r.backoff_ms);
        rc.max_in_flight = r.max_in_flight;
        if (r.token_budget > 0) {
            rc.token_budget = r.token_budget;
        }
        auto log = ctx.log;
        return std::make_unique<llm::RemoteBackend>(rc, transport, [log](std::chrono::milliseconds d) {
            log->debug("retrying in {} ms", d.count());
            std::this_thread::sleep_for(d);
        });
    }
    throw Error(ErrorKind::Config, "unknown backend '" + spec + "' (mock[:seed], uniform:<V>, remote)");
}

ojson option_values(const CLI::App& app) {
    ojson out = ojson::object();
    for (const CLI::Option* opt : app.get_options()) {
        std::string name = opt->get_single_name();
        if (name.empty() || name == "help") {
            continue;
        }
        if (name == "api-token") {
            out[name] = opt->count() > 0 ? ojson("<redacted>") : ojson(nullptr);
            continue;
        }
        if (opt->get_type_size() == 0) {
            out[name] = opt->count() > 0;
            continue;
        }
        if (opt->count() > 0) {
            const auto& r = opt->results();
            out[name] = r.size() == 1 ? ojson(r.front()) : ojson(r);
        } else {
            const std::string d = opt->get_default_str();
            out[name] = d.empty() ? ojson(nullptr) : ojson(d);
        }
    }
    return out;
}

ojson resolved_config(const CLI::App& root, const CLI::App& sub, const std::string& log_level, bool token_set) {
    ojson j;
    j["subcommand"] = sub.get_name();
    j["options"] = option_values(sub);
    const CLI::Option* config = root.get_config_ptr();
    j["config_file"] = config != nullptr && config->count() > 0 ? ojson(config->as<std::string>()) : ojson(nullptr);
    j["log_level"] = log_level;
    j["api_token_set"] = token_set;
    return j;
}

// ---------------------------------------------------------------------------

int run_forge(const ForgeArgs& a, Context& ctx) {
    auto records = description::load_metadata(a.metadata);
    auto pairs = forge::pairs_from_metadata(records);
    auto pool = prompt::load_pool(a.pool);
    forge::BalanceConfig balance;
    balance.weights = forge::BalanceConfig::parse_weights(a.weights);
    balance.prompts_per_pair = a.prompts_per_pair;
    balance.distinct_prompts = a.distinct_prompts;
    auto plan = forge::plan_pairs(pairs, pool, balance, a.seed);
    ctx.log->info("planned {} items from {} pairs and {} prompts", plan.size(), pairs.size(), pool.size());

    std::vector<forge::WorkItem> items;
    const fs::path out_dir = a.out;
    if (a.resume) {
        items = forge::resume(plan, a.seed, out_dir);
        ctx.log->info("resuming: {} of {} items left", items.size(), plan.size());
    } else {
        if (fs::exists(out_dir) && (!forge::list_shards(out_dir).empty() || fs::exists(out_dir / "deadletter.jsonl"))) {
            throw Error(ErrorKind::Config, out_dir.string() + " already holds forge output; pass --resume");
        }
        items = plan;
    }

    ojson summary;
    if (items.empty()) {
        ctx.log->info("nothing left to do");
        summary["processed"] = 0;
        ctx.out << summary.dump() << '\n';
        return kExitOk;
    }

    auto backend = make_backend(a.backend, a.remote, ctx);
    llm::DecodingConfig decoding;
    decoding.temperature = a.decoding.temperature;
    decoding.top_p = a.decoding.top_p;
    decoding.max_new_tokens = a.decoding.max_new_tokens;
    if (!a.decoding.system_prompt.empty()) {
        decoding.system_prompt = a.decoding.system_prompt;
    }

    forge::ForgeInputs inputs{&pairs, &pool, a.seed};
    forge::ForgeOptions options;
    options.out_dir = out_dir;
    options.parallelism = a.parallelism;
    options.shard_size = a.shard_size;
    options.max_deadletter_fraction = a.max_deadletter_fraction;
    if (a.stop_after > 0) {
        options.stop_after = a.stop_after;
    }
    options.config = ctx.config;

    auto result = forge::run_forge(items, inputs, *backend, decoding, options);
    summary["processed"] = result.processed;
    summary["triplets"] = result.triplets;
    summary["deadletters"] = result.deadletters;
    summary["interrupted"] = result.interrupted;
    ojson counts = ojson::object();
    for (const auto& [domain, n] : result.domain_counts) {
        counts[std::string(to_string(domain))] = n;
    }
    summary["counts"] = counts;
    ctx.log->info("wrote {} triplets, {} dead letters", result.triplets, result.deadletters);
    ctx.out << summary.dump() << '\n';
    return kExitOk;
}

int run_probe(const ProbeArgs& a, Context& ctx) {
    std::vector<std::pair<std::string, std::vector<forge::Triplet>>> datasets;
    std::set<std::string> labels;
    for (const auto& spec : a.datasets) {
        auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
            throw Error(ErrorKind::Config, "--dataset expects label=path, got '" + spec + "'");
        }
        std::string label = spec.substr(0, eq);
        if (!labels.insert(label).second) {
            throw Error(ErrorKind::Config, "duplicate dataset label '" + label + "'");
        }
        datasets.emplace_back(label, forge::read_shards(spec.substr(eq + 1)));
        ctx.log->info("{}: {} triplets", label, datasets.back().second.size());
    }
    auto scorer = make_backend(a.scorer, a.remote, ctx);
    probe::ComparisonTable table;
    if (datasets.size() == 1) {
        auto report = probe::corpus_perplexity(*scorer, datasets.front().second, datasets.front().first, a.parallelism);
        table.argmin_label = report.dataset_label;
        table.reports.push_back(std::move(report));
    } else {
        table = probe::compare_sources(*scorer, datasets, a.parallelism);
    }
    ojson j = probe::to_json(table);
    j["config"] = ctx.config;
    write_text(a.out, j.dump(2) + "\n");
    for (const auto& r : table.reports) {
        ctx.log->info("{}: ppl {:.6f} over {} tokens", r.dataset_label, r.ppl, r.token_count);
    }
    return kExitOk;
}

int run_train(const TrainArgs& a, Context& ctx) {
    const adapter::AdapterDims dims = parse_dims(a.dims);
    adapter::Fixture fx = adapter::load_fixture(a.fixture);
    if (dims.d != fx.spec.dims.d) {
        throw Error(ErrorKind::ShapeMismatch, "--dims d=" + std::to_string(dims.d) + " but fixture states have width " +
                                                  std::to_string(fx.spec.dims.d));
    }
    if (dims.d_out != fx.decoder.width()) {
        throw Error(ErrorKind::WidthMismatch, "--dims dp=" + std::to_string(dims.d_out) + " but decoder width is " +
                                                  std::to_string(fx.decoder.width()));
    }
    auto init = adapter::init_adapter(dims, fx.spec.layer_ids, a.train.seed);
    ctx.log->info("training on {} samples for {} steps", fx.samples.size(), a.train.total_steps(fx.samples.size()));
    auto result = adapter::train_adapter(fx.samples, fx.decoder, std::move(init), a.train,
                                         [&](int step, const adapter::AdapterParams&, adapter::AdapterGradients&) {
                                             if (step % 100 == 0) {
                                                 ctx.log->debug("step {}", step);
                                             }
                                         });
    const double final_loss = adapter::mean_loss(result.params, fx.decoder, fx.samples);
    adapter::Checkpoint ckpt{result.params, static_cast<std::uint64_t>(result.steps), adapter::rng_state(result.rng)};
    fs::path out = a.out;
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    adapter::write_checkpoint(out, ckpt);

    ojson summary;
    summary["steps"] = result.steps;
    summary["final_mean_nll"] = final_loss;
    summary["max_alpha_sum_error"] = result.max_alpha_sum_error;
    summary["alpha"] = std::vector<double>(result.params.aggregation.alpha_logits.size());
    auto alpha = adapter::softmax(result.params.aggregation.alpha_logits);
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        summary["alpha"][static_cast<std::size_t>(i)] = alpha(i);
    }
    summary["loss_log"] = result.loss_log;
    summary["train"] = a.train.to_json();
    summary["config"] = ctx.config;
    ctx.out << summary.dump() << '\n';
    ctx.log->info("final mean nll {:.6f}; checkpoint {}", final_loss, out.string());
    return kExitOk;
}

int run_grad_check(const GradCheckArgs& a, Context& ctx) {
    adapter::GradCheckConfig cfg;
    cfg.seed = a.seed;
    cfg.epsilon = a.epsilon;
    cfg.tolerance = a.tolerance;
    adapter::GradientHook hook;
    if (a.inject != 0.0) {
        hook = [&](adapter::AdapterGradients& g) { g.banks.queries.front()(0, 0) += a.inject; };
    }
    auto report = adapter::grad_check(cfg, hook);
    ojson j;
    j["seed"] = a.seed;
    j["epsilon"] = a.epsilon;
    j["tolerance"] = a.tolerance;
    j["entries"] = report.entries;
    j["max_relative_error"] = report.max_relative_error;
    j["passed"] = report.passed;
    ojson per = ojson::object();
    for (const auto& t : report.tensors) {
        per[t.name] = t.max_relative_error;
    }
    j["tensors"] = per;
    ctx.out << j.dump() << '\n';
    if (!report.passed) {
        ctx.log->error("gradient check failed: max relative error {:.3e} >= {:.1e}", report.max_relative_error,
                       a.tolerance);
        return kExitDomainError;
    }
    ctx.log->info("gradient check passed: max relative error {:.3e} over {} entries", report.max_relative_error,
                  report.entries);
    return kExitOk;
}

int run_eval(const EvalArgs& a, bool has_backbone, Context& ctx) {
    auto items = eval::load_responses(a.responses);
    std::optional<eval::BaselineFile> baseline;
    if (!a.baseline.empty()) {
        baseline = eval::load_baseline(a.baseline);
    }
    eval::MatchOptions options;
    options.choice_extractor = a.choice_extractor;
    auto report = eval::evaluate(items, options, has_backbone ? std::optional(a.backbone_ifrate) : std::nullopt,
                                 baseline);
    ojson j = eval::to_json(report);
    j["config"] = ctx.config;
    write_text(a.out, j.dump(2) + "\n");
    ctx.log->info("{} items, micro {:.2f}, macro {:.2f}", report.accuracy.items, report.accuracy.micro,
                  report.accuracy.macro);
    return kExitOk;
}

int run_validate(const ValidateArgs& a, Context& ctx) {
    ojson j;
    if (!a.metadata.empty()) {
        std::ifstream in(a.metadata);
        if (!in) {
            throw Error(ErrorKind::Io, "cannot open " + a.metadata);
        }
        std::vector<description::MetadataRecord> records;
        std::size_t warnings = 0;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            auto record = description::parse_metadata_record(line, line_no);
            description::AudioDescription desc;
            try {
                desc = description::build_description(record);
            } catch (const Error& e) {
                throw Error(e.kind(), e.what(), line_no);
            }
            for (const auto& v : description::validate_description(desc)) {
                std::string where = v.segment ? "segment " + std::to_string(*v.segment) + ": " : "";
                if (!v.warning) {
                    throw Error(ErrorKind::InvariantViolation, record.id + ": " + where + v.rule, line_no);
                }
                ++warnings;
                ctx.log->warn("line {}: {}: {}{}", line_no, record.id, where, v.rule);
            }
            records.push_back(std::move(record));
        }
        forge::pairs_from_metadata(records);
        j["kind"] = "metadata";
        j["records"] = records.size();
        j["warnings"] = warnings;
    } else if (!a.pool.empty()) {
        auto pool = prompt::load_pool(a.pool);
        j["kind"] = "pool";
        j["records"] = pool.size();
        ojson per = ojson::object();
        for (Domain d : kAllDomains) {
            per[std::string(to_string(d))] = pool.domain_indices(d).size();
        }
        j["per_domain"] = per;
    } else {
        std::size_t n = 0;
        forge::for_each_triplet(a.shard, [&](const forge::Triplet&) { ++n; });
        j["kind"] = "shard";
        j["records"] = n;
    }
    ctx.out << j.dump() << '\n';
    return kExitOk;
}

bool valid_level(const std::string& name) {
    static const std::set<std::string> names{"trace", "debug", "info", "warn", "error", "critical", "off"};
    return names.contains(name);
}

} // namespace

std::optional<std::string> process_env(const std::string& name) {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) {
        return std::nullopt;
    }
    return std::string(v);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    CLI::App app{"Audio instruction-data toolkit: data forging, perplexity probes, adapter training and "
                 "evaluation metrics.",
                 "desta"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "INI/TOML file with one section per subcommand");
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off (DESTA_LOG overrides)")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

    ForgeArgs fa;
    auto* forge_cmd = app.add_subcommand("forge", "Generate triplets from metadata, a prompt pool and a backend");
    forge_cmd->add_option("--metadata", fa.metadata, "Metadata interchange file")->required()->check(CLI::ExistingFile);
    forge_cmd->add_option("--pool", fa.pool, "Prompt pool file")->required()->check(CLI::ExistingFile);
    forge_cmd->add_option("--backend", fa.backend, "mock[:seed] | uniform:<V> | remote");
    forge_cmd->add_option("--seed", fa.seed, "Plan seed");
    forge_cmd->add_option("--weights", fa.weights, "Domain weights");
    forge_cmd->add_option("--prompts-per-pair", fa.prompts_per_pair, "Prompts sampled per pair")
        ->check(CLI::PositiveNumber);
    forge_cmd->add_flag("--distinct-prompts", fa.distinct_prompts, "Avoid repeating a prompt for the same pair");
    forge_cmd->add_option("--out", fa.out, "Output directory")->required();
    forge_cmd->add_option("--parallelism", fa.parallelism, "Concurrent generations")->check(CLI::PositiveNumber);
    forge_cmd->add_option("--shard-size", fa.shard_size, "Records per shard")->check(CLI::PositiveNumber);
    forge_cmd->add_option("--max-deadletter-fraction", fa.max_deadletter_fraction, "Failure share that fails the run")
        ->check(CLI::Range(0.0, 1.0));
    forge_cmd->add_flag("--resume", fa.resume, "Continue an interrupted run in --out");
    forge_cmd->add_option("--stop-after", fa.stop_after, "Stop after writing this many records")->group("");
    forge_cmd->add_option("--temperature", fa.decoding.temperature, "Sampling temperature")
        ->check(CLI::NonNegativeNumber)
        ->group("Decoding");
    forge_cmd->add_option("--top-p", fa.decoding.top_p, "Nucleus mass")->check(CLI::Range(0.0, 1.0))->group("Decoding");
    forge_cmd->add_option("--max-new-tokens", fa.decoding.max_new_tokens, "Generation limit")
        ->check(CLI::PositiveNumber)
        ->group("Decoding");
    forge_cmd->add_option("--system-prompt", fa.decoding.system_prompt, "Optional system message")->group("Decoding");
    add_remote_options(forge_cmd, fa.remote);

    ProbeArgs pa;
    auto* probe_cmd = app.add_subcommand("probe", "Corpus perplexity of dataset targets under one scorer");
    probe_cmd->add_option("--scorer", pa.scorer, "mock[:seed] | uniform:<V> | remote");
    probe_cmd->add_option("--dataset", pa.datasets, "label=path to a shard file or forge directory")
        ->required()
        ->expected(1, -1);
    probe_cmd->add_option("--out", pa.out, "Report file")->required();
    probe_cmd->add_option("--parallelism", pa.parallelism, "Concurrent scoring calls")->check(CLI::PositiveNumber);
    add_remote_options(probe_cmd, pa.remote);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train-adapter", "Train the toy adapter on a planted fixture");
    train_cmd->add_option("--fixture", ta.fixture, "Fixture file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--dims", ta.dims, "Adapter dims")->check(dims_validator);
    train_cmd->add_option("--steps", ta.train.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--epochs", ta.train.epochs, "Epochs (overrides --steps when > 0)")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--batch-size", ta.train.batch_size, "Samples per step (0 = all)")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--lr", ta.train.lr, "Peak learning rate")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--min-lr", ta.train.min_lr, "Final learning rate")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--warmup-steps", ta.train.warmup_steps, "Linear warmup steps")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--seed", ta.train.seed, "Initialization and batching seed");
    train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();

    GradCheckArgs ga;
    auto* grad_cmd = app.add_subcommand("grad-check", "Compare analytic and finite-difference adapter gradients");
    grad_cmd->add_option("--seed", ga.seed, "Instance seed");
    grad_cmd->add_option("--epsilon", ga.epsilon, "Central difference step")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--tolerance", ga.tolerance, "Max relative error")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--inject-gradient-error", ga.inject, "Add this to one analytic entry")->group("");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Accuracy, IFrate, forgetting rate and relative scores");
    eval_cmd->add_option("--responses", ea.responses, "Response records")->required()->check(CLI::ExistingFile);
    auto* backbone_opt =
        eval_cmd->add_option("--backbone-ifrate", ea.backbone_ifrate, "IFrate of the text-only backbone, percent");
    eval_cmd->add_option("--baseline", ea.baseline, "Per-domain baseline scores")->check(CLI::ExistingFile);
    eval_cmd->add_flag("--choice-extractor", ea.choice_extractor, "Match the first standalone A-D letter");
    eval_cmd->add_option("--out", ea.out, "Report file")->required();

    ValidateArgs va;
    auto* validate_cmd = app.add_subcommand("validate", "Schema-check a metadata, pool or shard file");
    auto* inputs = validate_cmd->add_option_group("input", "Exactly one file to check");
    inputs->add_option("--metadata", va.metadata, "Metadata interchange file")->check(CLI::ExistingFile);
    inputs->add_option("--pool", va.pool, "Prompt pool file")->check(CLI::ExistingFile);
    inputs->add_option("--shard", va.shard, "Shard file or forge directory")->check(CLI::ExistingPath);
    inputs->require_option(1);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    if (auto level = env("DESTA_LOG")) {
        if (!valid_level(*level)) {
            err << "error: DESTA_LOG='" << *level << "' is not a log level\n";
            return kExitUsage;
        }
        log_level = *level;
    }
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto log = std::make_shared<spdlog::logger>("desta", sink);
    log->set_pattern("[%l] %v");
    log->set_level(spdlog::level::from_str(log_level));

    CLI::App* sub = app.get_subcommands().front();
    Context ctx{out, log, {}, std::nullopt};
    RemoteOptions* remote = sub == forge_cmd ? &fa.remote : sub == probe_cmd ? &pa.remote : nullptr;
    if (remote != nullptr) {
        if (auto token = env("DESTA_API_TOKEN")) {
            remote->api_token = *token;
        }
        if (!remote->api_token.empty()) {
            ctx.api_token = remote->api_token;
        }
    }
    ctx.config = resolved_config(app, *sub, log_level, ctx.api_token.has_value());

    try {
        if (sub == forge_cmd) {
            return run_forge(fa, ctx);
        }
        if (sub == probe_cmd) {
            return run_probe(pa, ctx);
        }
        if (sub == train_cmd) {
            return run_train(ta, ctx);
        }
        if (sub == grad_cmd) {
            return run_grad_check(ga, ctx);
        }
        if (sub == eval_cmd) {
            return run_eval(ea, backbone_opt->count() > 0, ctx);
        }
        return run_validate(va, ctx);
    } catch (const Error& e) {
        log->error("{}", e.what());
        return kExitDomainError;
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n\n" << sub->help();
        return kExitUsage;
    } catch (const std::exception& e) {
        log->error("{}", e.what());
        return kExitDomainError;
    }
}

} // namespace desta::cli
