// sslab: corpus statistics, lexical baseline, cross-validated encoder runs and
// checkpoint scoring from the command line.
//
// Exit codes: 0 ok, 1 I/O or checkpoint failure, 2 validation or config
// error, 3 non-finite training loss.

#include <chrono>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "sslab/sslab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw sslab::Error(sslab::ErrorKind::IoError, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

json file_entry(const fs::path& path, const fs::path& base) {
  return {{"path", base.empty() ? path.generic_string() : fs::relative(path, base).generic_string()},
          {"sha256", sha256_hex(sslab::io::read_text(path))}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw sslab::Error(sslab::ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

/// Writes run.json into `out`, hashing every listed output after it was written.
void write_manifest(const fs::path& out, const std::string& command, json arguments, json config,
                    std::uint64_t seed, const std::vector<fs::path>& inputs, std::vector<fs::path> outputs,
                    std::chrono::steady_clock::time_point started) {
  json m;
  m["command"] = command;
  m["arguments"] = std::move(arguments);
  m["config"] = std::move(config);
  m["seed"] = seed;
  json in = json::array();
  for (const auto& p : inputs) in.push_back(file_entry(p, {}));
  m["inputs"] = std::move(in);
  std::sort(outputs.begin(), outputs.end());
  json outs = json::array();
  for (const auto& p : outputs) outs.push_back(file_entry(p, out));
  m["outputs"] = std::move(outs);
  m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  sslab::io::write_text(out / "run.json", sslab::io::dump(m, sslab::io::RealFormat::shortest));
}

struct DataFlags {
  std::string data;
  std::string out;
  bool lenient = false;
};

void report_skipped(const sslab::Dataset& d) {
  if (!d.skipped.empty()) std::cerr << "warning: skipped " << d.skipped.size() << " invalid row(s)\n";
}

int cmd_eda(const DataFlags& f, std::size_t char_bin, std::size_t word_bin) {
  const auto started = std::chrono::steady_clock::now();
  const auto d = sslab::load_dataset(f.data, !f.lenient);
  report_skipped(d);
  const auto report = sslab::compute_eda(d, char_bin, word_bin);
  ensure_dir(f.out);
  const auto written = sslab::export_eda(report, f.out);
  json args{{"data", f.data}, {"char_bin", char_bin}, {"word_bin", word_bin}, {"lenient", f.lenient}};
  write_manifest(f.out, "eda", args, json::object(), 0, {f.data}, written, started);
  std::cout << "records " << report.record_count << ", unique anchors " << report.unique_anchor_count
            << ", unique targets " << report.unique_target_count << "\n";
  return 0;
}

int cmd_baseline(const DataFlags& f) {
  const auto started = std::chrono::steady_clock::now();
  const auto d = sslab::load_dataset(f.data, !f.lenient);
  report_skipped(d);
  const auto rep = sslab::run_baseline(d);
  ensure_dir(f.out);
  double mean = 0.0;
  for (double s : rep.similarities) mean += s;
  mean /= static_cast<double>(rep.similarities.size());
  json j;
  j["record_count"] = d.size();
  j["pearson"] = rep.pearson_vs_gold ? json(*rep.pearson_vs_gold) : json(nullptr);
  j["pearson_status"] = rep.pearson_status;
  j["mean_similarity"] = mean;
  j["histogram_bins"] = sslab::kBaselineHistogramBins;
  const fs::path out(f.out);
  sslab::io::write_text(out / "baseline_report.json", sslab::io::dump(j));
  sslab::io::write_text(out / "hist_levenshtein.csv", sslab::histogram_csv(rep.histogram));
  write_manifest(out, "baseline", {{"data", f.data}, {"lenient", f.lenient}}, json::object(), 0, {f.data},
                 {out / "baseline_report.json", out / "hist_levenshtein.csv"}, started);
  std::cout << "pearson "
            << (rep.pearson_vs_gold ? sslab::io::format_fixed6(*rep.pearson_vs_gold) : rep.pearson_status) << "\n";
  return 0;
}

struct CrossvalFlags {
  std::string preset;
  std::size_t k = 0;
  std::size_t bins = 5;
  std::uint64_t seed = 42;
  std::size_t epochs = 5;
  std::string layout = "anchor_target_context";
  std::size_t workers = 1;
};

int cmd_crossval(const DataFlags& f, const CrossvalFlags& c) {
  const auto started = std::chrono::steady_clock::now();
  sslab::ModelRunOptions opts;
  opts.config = sslab::preset(c.preset);
  opts.config.seed = c.seed;
  opts.config.epochs = c.epochs;
  opts.config.input_layout = sslab::parse_layout(c.layout);
  if (c.epochs == 0) throw sslab::Error(sslab::ErrorKind::InvalidConfig, "--epochs must be >= 1");

  const auto d = sslab::load_dataset(f.data, !f.lenient);
  report_skipped(d);
  const auto plan = sslab::stratified_kfold(d, c.k, c.bins, c.seed);
  const fs::path out(f.out);
  ensure_dir(out);
  opts.artifact_dir = out;
  std::vector<sslab::FoldTraining> folds(plan.k);
  const auto rep = sslab::cross_validate(d, plan, sslab::model_fold_runner(opts, folds), c.workers,
                                         sslab::kModelTrainingLossDefinition);
  sslab::io::write_text(out / "cv_report.json", sslab::io::dump(sslab::cv_report_json(rep, plan)));

  std::vector<fs::path> written{out / "cv_report.json"};
  json epoch_seconds = json::array();
  for (const auto& ft : folds) {
    written.insert(written.end(), ft.files.begin(), ft.files.end());
    epoch_seconds.push_back(ft.trace.epoch_seconds);
  }
  json args{{"data", f.data},     {"preset", c.preset},   {"k", c.k},           {"bins", c.bins},
            {"seed", c.seed},     {"epochs", c.epochs},   {"layout", c.layout}, {"workers", c.workers},
            {"lenient", f.lenient}};
  json config = sslab::config_json(opts.config);
  config.erase("vocab_size");  // set per fold, see fold_<n>.config.json
  config["epoch_seconds_per_fold"] = std::move(epoch_seconds);
  write_manifest(out, "crossval", args, config, c.seed, {f.data}, written, started);

  for (const auto& m : rep.folds) {
    std::cout << "fold " << m.fold + 1 << ": train " << sslab::io::format_fixed6(m.train_loss) << ", validation "
              << sslab::io::format_fixed6(m.validation_loss) << ", pearson "
              << (m.pearson ? sslab::io::format_fixed6(*m.pearson) : m.pearson_status) << "\n";
  }
  std::cout << "cv estimate " << sslab::io::format_fixed6(rep.cv_estimate) << "\n";
  return 0;
}

int cmd_score(const std::string& checkpoint, const std::string& anchor, const std::string& target,
              const std::string& context) {
  const auto ck = sslab::load_checkpoint(checkpoint);
  const auto vocab = sslab::Vocabulary::load(sslab::vocab_path_for(checkpoint));
  if (vocab.size() != ck.config.vocab_size) {
    throw sslab::Error(sslab::ErrorKind::ShapeMismatch, "vocabulary file does not match the checkpoint");
  }
  const auto seq = sslab::encode(anchor, target, context, vocab, ck.config.max_len, ck.config.input_layout);
  const double score = sslab::forward(seq, ck.params, ck.config);
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, score, std::chars_format::fixed);
  std::cout << std::string(buf, end) << "\n";
  return 0;
}

int exit_code_for(sslab::ErrorKind kind) {
  switch (kind) {
    case sslab::ErrorKind::IoError:
    case sslab::ErrorKind::BadMagic:
    case sslab::ErrorKind::ShapeMismatch:
      return 1;
    case sslab::ErrorKind::NonFiniteLoss:
      return 3;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phrase similarity laboratory"};
  app.require_subcommand(1);

  DataFlags data;
  auto add_data_flags = [&](CLI::App* sub) {
    sub->add_option("--data", data.data, "dataset CSV (id, anchor, target, context, score)")->required();
    sub->add_option("--out", data.out, "output directory")->required();
    sub->add_flag("--lenient", data.lenient, "skip invalid rows instead of failing");
  };

  std::size_t char_bin = 5, word_bin = 1;
  auto* eda = app.add_subcommand("eda", "dataset statistics and histograms");
  add_data_flags(eda);
  eda->add_option("--char-bin", char_bin, "character-count histogram bin width");
  eda->add_option("--word-bin", word_bin, "word-count histogram bin width");

  auto* baseline = app.add_subcommand("baseline", "Levenshtein similarity baseline");
  add_data_flags(baseline);

  CrossvalFlags cv;
  auto* crossval = app.add_subcommand("crossval", "stratified K-fold training and evaluation");
  add_data_flags(crossval);
  crossval->add_option("--preset", cv.preset, "base, small or xsmall")->required();
  crossval->add_option("--k", cv.k, "number of folds")->required();
  crossval->add_option("--bins", cv.bins, "score strata for fold assignment");
  crossval->add_option("--seed", cv.seed, "global seed");
  crossval->add_option("--epochs", cv.epochs, "training epochs per fold");
  crossval->add_option("--layout", cv.layout, "anchor_target_context or anchor_context");
  crossval->add_option("--workers", cv.workers, "folds trained concurrently");

  std::string checkpoint, anchor, target, context;
  auto* score = app.add_subcommand("score", "score one phrase pair with a saved fold checkpoint");
  score->add_option("--checkpoint", checkpoint, "fold_<n>.ckpt written by crossval")->required();
  score->add_option("--anchor", anchor)->required();
  score->add_option("--target", target)->required();
  score->add_option("--context", context)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (eda->parsed()) return cmd_eda(data, char_bin, word_bin);
    if (baseline->parsed()) return cmd_baseline(data);
    if (crossval->parsed()) return cmd_crossval(data, cv);
    return cmd_score(checkpoint, anchor, target, context);
  } catch (const sslab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
