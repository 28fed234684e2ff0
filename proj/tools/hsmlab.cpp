// hsmlab: tokenizer training, model training, evaluation, generation,
// benchmarking, gradient checking and metrics export.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <Eigen/Core>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hsm/bench.hpp"
#include "hsm/checkpoint.hpp"
#include "hsm/data.hpp"
#include "hsm/errors.hpp"
#include "hsm/experiment.hpp"
#include "hsm/generation.hpp"
#include "hsm/gradcheck_suite.hpp"
#include "hsm/metrics.hpp"
#include "hsm/model.hpp"
#include "hsm/runtime.hpp"
#include "hsm/tokenizer.hpp"
#include "hsm/toy_corpus.hpp"
#include "hsm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hsm;

namespace {

using Real = float;

void apply_thread_env() {
  if (const char* env = std::getenv("HSM_THREADS")) {
    const int n = std::atoi(env);
    if (n < 1) throw ConfigError("HSM_THREADS must be a positive integer");
    Eigen::setNbThreads(n);
  } else {
    Eigen::setNbThreads(1);
  }
}

// A preset name or a path to an experiment JSON file.
ExperimentConfig resolve_config(const std::string& ref) {
  if (fs::exists(ref)) return load_experiment(ref);
  for (const auto& n : preset_names()) {
    if (n == ref) return make_preset(n);
  }
  throw ConfigError("'" + ref + "' is neither a config file nor a preset name");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("'" + item + "' is not an integer");
    }
  }
  return out;
}

// ---- tokenize -------------------------------------------------------------

struct TokenizeArgs {
  std::string corpus, out, format = "auto";
  int vocab_size = 5000;
  bool end_of_text = false;
};

int cmd_tokenize(const TokenizeArgs& a) {
  const auto corpus = load_corpus(a.corpus, corpus_format_from_string(a.format));
  const auto res = train_bpe(corpus.stories, a.vocab_size, a.end_of_text);
  save_vocab(res.vocab, a.out);
  std::cout << "vocab_size " << res.vocab.size() << "\n";
  if (res.stopped_early) std::cerr << "note: corpus exhausted before " << a.vocab_size << " tokens\n";
  return 0;
}

// ---- make-corpus ----------------------------------------------------------

struct MakeCorpusArgs {
  std::string out;
  ToyCorpusConfig cfg;
};

int cmd_make_corpus(const MakeCorpusArgs& a) {
  std::string text;
  for (const auto& s : make_toy_stories(a.cfg)) text += s + "\n";
  write_file(a.out, text);
  std::cout << "stories " << a.cfg.stories << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, data, vocab, out_dir, format = "auto";
  std::optional<int> epochs, batch_size, micro_batch;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool match_vocab = false;
};

int cmd_train(const TrainArgs& a) {
  auto exp = resolve_config(a.config);
  if (a.epochs) exp.train.epochs = *a.epochs;
  if (a.batch_size) exp.train.batch_size = *a.batch_size;
  if (a.micro_batch) exp.train.micro_batch = *a.micro_batch;
  if (a.seed) exp.train.seed = *a.seed;
  exp.train.validate();
  const Vocab vocab = load_vocab(a.vocab);
  if (a.match_vocab) exp.model.vocab = vocab.size();
  if (exp.model.vocab != vocab.size()) {
    throw ConfigError("model vocab " + std::to_string(exp.model.vocab) + " differs from tokenizer size " +
                      std::to_string(vocab.size()) + " (use --match-vocab to adopt the tokenizer's)");
  }
  exp.model.validate();

  const auto corpus = load_corpus(a.data, corpus_format_from_string(a.format));
  const auto split = filter_and_split(corpus, vocab, exp.model.context, exp.train.val_fraction, exp.train.seed);
  std::cerr << "data " << json(split.stats).dump() << "\n";

  Model<Real> model(exp.model, exp.train.seed);
  std::cerr << "params " << model.count_params() << "\n";
  save_experiment(exp, (fs::create_directories(a.out_dir), fs::path(a.out_dir) / "config.json"));

  TrainOptions opt;
  opt.out_dir = a.out_dir;
  opt.resume = a.resume;
  opt.log = &std::cerr;
  opt.extra_meta = {{"experiment", exp}, {"params", model.count_params()}};
  const auto res = train(model, split, exp.train, opt);
  std::cout << json{{"initial_val_loss", res.initial.loss},
                    {"best_epoch", res.best_epoch},
                    {"best_val_loss", res.best_val_loss},
                    {"epochs", res.history.size()}}
                   .dump()
            << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, vocab, split = "val", format = "auto";
};

int cmd_eval(const EvalArgs& a) {
  json meta;
  auto model = load_checkpoint<Real>(a.checkpoint, &meta);
  const Vocab vocab = load_vocab(a.vocab);
  TrainConfig tc;
  if (meta.contains("train")) tc = meta.at("train").get<TrainConfig>();
  const auto corpus = load_corpus(a.data, corpus_format_from_string(a.format));
  const auto split = filter_and_split(corpus, vocab, model.config().context, tc.val_fraction, tc.seed);
  const auto& stories = a.split == "train" ? split.train : split.val;
  if (a.split != "train" && a.split != "val") throw UsageError("--split must be train or val");
  const auto batches = validation_batches(stories, model.config().context, tc.batch_size);
  const auto r = validate(model, std::span<const Batch>(batches), tc.micro_batch);
  if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw NumericError("accuracy outside [0, 1]");
  std::cout << json{{"split", a.split}, {"loss", r.loss}, {"accuracy", r.accuracy}, {"positions", r.positions},
                    {"epoch", meta.value("epoch", 0)}}
                   .dump()
            << "\n";
  return 0;
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint, vocab, prompt, prompt_file, out;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int max_new = 100;
};

int cmd_generate(const GenerateArgs& a) {
  if (a.prompt.empty() == a.prompt_file.empty()) throw UsageError("give exactly one of --prompt or --prompt-file");
  auto model = load_checkpoint<Real>(a.checkpoint);
  const Vocab vocab = load_vocab(a.vocab);
  std::vector<std::string> prompts;
  if (!a.prompt.empty()) {
    prompts.push_back(a.prompt);
  } else {
    std::ifstream in(a.prompt_file);
    if (!in) throw IoError("cannot read " + a.prompt_file);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) prompts.push_back(line);
    }
    if (prompts.empty()) throw UsageError(a.prompt_file + " holds no prompts");
  }
  GenerateOptions g;
  g.max_new = a.max_new;
  g.temperature = a.temperature;
  g.seed = a.seed;
  std::string text;
  for (const auto& p : prompts) {
    std::string completion = generate(model, vocab, p, g);
    for (char& c : completion) {
      if (c == '\n') c = ' ';
    }
    text += completion + "\n";
  }
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file(a.out, text);
  }
  return 0;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string config = "gpt_reference", lengths = "32,64,128,256,512", out;
  int repeats = 5, batch = 8;
  bool backward = false, scores = true;
};

int cmd_bench(const BenchArgs& a) {
  const auto exp = resolve_config(a.config);
  BenchOptions opt;
  opt.lengths = parse_int_list(a.lengths);
  opt.repeats = a.repeats;
  opt.batch = a.batch;
  opt.dim = exp.model.dim;
  opt.backward = a.backward;
  std::vector<std::pair<std::string, BenchCase>> cases;
  std::vector<std::string> seen;
  for (const auto& spec : exp.model.layers) {
    const std::string label = json(spec).dump();
    if (std::find(seen.begin(), seen.end(), label) != seen.end()) continue;
    seen.push_back(label);
    std::string name = to_string(spec.kind);
    if (is_hsm(spec.kind)) {
      name += "/shift=";
      for (size_t i = 0; i < spec.shifts.size(); ++i) name += (i ? ":" : "") + std::to_string(spec.shifts[i]);
    }
    if (spec.heads > 1) name += "/heads=" + std::to_string(spec.heads);
    cases.emplace_back(name, mixer_bench_case<Real>(spec, opt));
  }
  if (a.scores) {
    opt.heads = 8;
    cases.emplace_back("attention_scores", attention_scores_case<Real>(opt));
  }
  const auto report = run_bench(cases, opt);
  const std::string csv = bench_csv(report);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
  for (const auto& [label, slope] : report.slopes) std::cerr << "slope " << label << " " << slope << "\n";
  return 0;
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckArgs {
  std::string target = "all";
  double tolerance = 1e-4;
  bool inject_fault = false;
  bool list = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.list) {
    for (const auto& n : gradcheck_entry_names()) std::cout << n << "\n";
    return 0;
  }
  GradCheckSuiteOptions opt;
  opt.tolerance = a.tolerance;
  opt.inject_fault = a.inject_fault;
  const auto entries = run_gradcheck(a.target, opt);
  bool ok = true;
  for (const auto& e : entries) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-4s %-28s max_rel_error %.3e  (%lld elements, worst %s[%lld])\n",
                  e.pass ? "PASS" : "FAIL", e.name.c_str(), e.max_rel_error, e.checked, e.worst_parameter.c_str(),
                  e.worst_index);
    std::cout << line;
    ok = ok && e.pass;
  }
  std::cout << (ok ? "all gradient checks passed" : "gradient check FAILED") << " (tolerance " << a.tolerance
            << ")\n";
  return ok ? 0 : 2;
}

// ---- plotdata -------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> files, labels;
  std::string out;
};

int cmd_plotdata(const PlotArgs& a) {
  if (a.files.empty()) throw UsageError("no metrics files given");
  if (!a.labels.empty() && a.labels.size() != a.files.size()) {
    throw UsageError("--labels needs one label per metrics file");
  }
  std::vector<LabelledRun> runs;
  for (size_t i = 0; i < a.files.size(); ++i) {
    std::string label = a.labels.empty() ? fs::path(a.files[i]).parent_path().filename().string() : a.labels[i];
    if (label.empty()) label = fs::path(a.files[i]).stem().string();
    auto records = read_metrics(a.files[i]);
    if (records.empty()) throw UsageError(a.files[i] + " holds no metrics");
    runs.push_back({label, std::move(records)});
  }
  const auto csv = merge_plot_data(runs);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
  return 0;
}

// ---- stats ----------------------------------------------------------------

struct StatsArgs {
  std::string data, vocab, format = "auto";
  int context = 128;
  double val_fraction = 0.1;
  std::uint64_t seed = 1234;
};

int cmd_stats(const StatsArgs& a) {
  const auto corpus = load_corpus(a.data, corpus_format_from_string(a.format));
  const Vocab vocab = load_vocab(a.vocab);
  const auto split = filter_and_split(corpus, vocab, a.context, a.val_fraction, a.seed);
  std::cout << json(split.stats).dump(2) << "\n";
  return 0;
}

// ---- presets --------------------------------------------------------------

struct PresetArgs {
  std::string write_dir;
};

int cmd_presets(const PresetArgs& a) {
  std::cout << "name,ffn_hidden,params,deviation_pct\n";
  for (const auto& n : preset_names()) {
    const auto e = make_preset(n);
    const long long count = census(e.model);
    char dev[32];
    std::snprintf(dev, sizeof(dev), "%.4f",
                  100.0 * static_cast<double>(count - kReferenceParamTarget) / static_cast<double>(kReferenceParamTarget));
    std::cout << n << "," << e.model.ffn_hidden << "," << count << "," << dev << "\n";
    if (!a.write_dir.empty()) {
      fs::create_directories(a.write_dir);
      save_experiment(e, fs::path(a.write_dir) / (n + ".json"));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical shift mixing language models"};
  app.require_subcommand(1);

  TokenizeArgs tok;
  auto* c_tok = app.add_subcommand("tokenize", "Train a byte-level BPE vocabulary");
  c_tok->add_option("--corpus", tok.corpus)->required()->check(CLI::ExistingFile);
  c_tok->add_option("--vocab-size", tok.vocab_size);
  c_tok->add_option("--out", tok.out)->required();
  c_tok->add_option("--format", tok.format, "auto, plain or jsonl");
  c_tok->add_flag("--end-of-text", tok.end_of_text, "Reserve the <|endoftext|> special token");

  MakeCorpusArgs mk;
  auto* c_mk = app.add_subcommand("make-corpus", "Write a synthetic toy story corpus, one story per line");
  c_mk->add_option("--out", mk.out)->required();
  c_mk->add_option("--stories", mk.cfg.stories);
  c_mk->add_option("--seed", mk.cfg.seed);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  c_tr->add_option("--config", tr.config, "Preset name or experiment JSON")->required();
  c_tr->add_option("--data", tr.data)->required()->check(CLI::ExistingFile);
  c_tr->add_option("--vocab", tr.vocab)->required()->check(CLI::ExistingFile);
  c_tr->add_option("--out-dir", tr.out_dir)->required();
  c_tr->add_option("--format", tr.format);
  c_tr->add_option("--epochs", tr.epochs);
  c_tr->add_option("--batch-size", tr.batch_size);
  c_tr->add_option("--micro-batch", tr.micro_batch);
  c_tr->add_option("--seed", tr.seed);
  c_tr->add_flag("--resume", tr.resume, "Continue from out-dir/last.ckpt");
  c_tr->add_flag("--match-vocab", tr.match_vocab, "Set the model vocabulary to the tokenizer's size");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Validation loss and accuracy of a checkpoint");
  c_ev->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--vocab", ev.vocab)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--split", ev.split, "val or train");
  c_ev->add_option("--format", ev.format);

  GenerateArgs ge;
  auto* c_ge = app.add_subcommand("generate", "Continue prompts with a trained model");
  c_ge->add_option("--checkpoint", ge.checkpoint)->required()->check(CLI::ExistingFile);
  c_ge->add_option("--vocab", ge.vocab)->required()->check(CLI::ExistingFile);
  c_ge->add_option("--prompt", ge.prompt);
  c_ge->add_option("--prompt-file", ge.prompt_file)->check(CLI::ExistingFile);
  c_ge->add_option("--temperature", ge.temperature)->check(CLI::NonNegativeNumber);
  c_ge->add_option("--seed", ge.seed);
  c_ge->add_option("--max-new", ge.max_new)->check(CLI::NonNegativeNumber);
  c_ge->add_option("--out", ge.out);

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Median forward timings per sequence length and log-log slopes");
  c_be->add_option("--config", be.config, "Preset name or experiment JSON");
  c_be->add_option("--lengths", be.lengths, "Comma-separated sequence lengths");
  c_be->add_option("--repeats", be.repeats);
  c_be->add_option("--batch", be.batch);
  c_be->add_flag("--backward", be.backward, "Time forward+backward");
  c_be->add_flag("!--no-scores", be.scores, "Skip the attention-score core");
  c_be->add_option("--out", be.out);

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare tape gradients with central differences");
  c_gc->add_option("target", gc.target, "all, ops, mixers, models, a mixer kind or an entry name");
  c_gc->add_option("--tolerance", gc.tolerance);
  c_gc->add_flag("--inject-fault", gc.inject_fault, "Perturb every backward pass by 1% (must fail)");
  c_gc->add_flag("--list", gc.list);

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plotdata", "Merge metrics files into one CSV with a run column");
  c_pl->add_option("files", pl.files)->check(CLI::ExistingFile);
  c_pl->add_option("--labels", pl.labels, "Comma-separated run labels, one per file")->delimiter(',');
  c_pl->add_option("--out", pl.out);

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Dataset statistics after filtering and splitting");
  c_st->add_option("--data", st.data)->required()->check(CLI::ExistingFile);
  c_st->add_option("--vocab", st.vocab)->required()->check(CLI::ExistingFile);
  c_st->add_option("--context", st.context);
  c_st->add_option("--val-fraction", st.val_fraction);
  c_st->add_option("--seed", st.seed);
  c_st->add_option("--format", st.format);

  PresetArgs pr;
  auto* c_pr = app.add_subcommand("presets", "List the experiment presets with parameter counts");
  c_pr->add_option("--write-dir", pr.write_dir, "Also write each preset as JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    apply_thread_env();
    tune_allocator();
    if (c_tok->parsed()) return cmd_tokenize(tok);
    if (c_mk->parsed()) return cmd_make_corpus(mk);
    if (c_tr->parsed()) return cmd_train(tr);
    if (c_ev->parsed()) return cmd_eval(ev);
    if (c_ge->parsed()) return cmd_generate(ge);
    if (c_be->parsed()) return cmd_bench(be);
    if (c_gc->parsed()) return cmd_gradcheck(gc);
    if (c_pl->parsed()) return cmd_plotdata(pl);
    if (c_st->parsed()) return cmd_stats(st);
    if (c_pr->parsed()) return cmd_presets(pr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
