#include "capt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "capt/corruption.hpp"
#include "capt/encoder.hpp"
#include "capt/error.hpp"
#include "capt/mlm_head.hpp"

namespace capt {

namespace {

constexpr std::uint64_t kCorruptStream = 1;
constexpr std::uint64_t kOriginalDropout = 2;
constexpr std::uint64_t kCorruptedDropout = 3;

AdamHyper adam_hyper(const EncoderConfig& c) { return {c.adam_beta1, c.adam_beta2, c.adam_eps, c.weight_decay}; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_header() { return "step,lr,tau,mlm_loss,capt_loss,total_loss,mean_pair_cosine,queue_fill"; }

std::string format_metrics_row(const MetricsRow& r) {
  return std::to_string(r.step) + "," + fmt(r.lr) + "," + fmt(r.tau) + "," + fmt(r.mlm_loss) + "," + fmt(r.capt_loss) +
         "," + fmt(r.total_loss) + "," + fmt(r.mean_pair_cosine) + "," + std::to_string(r.queue_fill);
}

MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (cells.size() != 8) throw IoError("metrics row has " + std::to_string(cells.size()) + " fields: " + line);
  MetricsRow r;
  r.step = std::stoull(cells[0]);
  r.lr = std::strtod(cells[1].c_str(), nullptr);
  r.tau = std::strtod(cells[2].c_str(), nullptr);
  r.mlm_loss = std::strtod(cells[3].c_str(), nullptr);
  r.capt_loss = std::strtod(cells[4].c_str(), nullptr);
  r.total_loss = std::strtod(cells[5].c_str(), nullptr);
  r.mean_pair_cosine = std::strtod(cells[6].c_str(), nullptr);
  r.queue_fill = std::stoull(cells[7]);
  return r;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != metrics_header()) throw IoError("'" + path.string() + "' is not a metrics file");
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (!lines[i].empty()) rows.push_back(parse_metrics_row(lines[i]));
  }
  return rows;
}

Trainer::Trainer(RunConfig config, Vocabulary vocab, ParamStore params, std::span<const std::string> corpus_lines)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      params_(std::move(params)),
      adam_(adam_hyper(config_.model)),
      queue_(config_.model.queue_capacity, config_.model.agg_out),
      batches_(corpus_lines, vocab_, config_.model.batch, config_.model.max_len, config_.model.seed) {
  config_.validate();
  if (config_.model.vocab_size != vocab_.size()) {
    throw ConfigError("vocab_size " + std::to_string(config_.model.vocab_size) + " does not match the vocabulary (" +
                      std::to_string(vocab_.size()) + " tokens)");
  }
  if (config_.capt_weight == 0.0 && config_.model.noise_kind != NoiseKind::kMask) {
    throw ConfigError("capt_weight = 0 leaves no training signal under shuffle noise");
  }
}

Trainer::Trainer(RunConfig config, Vocabulary vocab, std::span<const std::string> corpus_lines)
    : Trainer(config, vocab, init_model_params(config.model, config.model.seed), corpus_lines) {}

Trainer Trainer::resume(const Checkpoint& c, std::span<const std::string> corpus_lines) {
  Trainer t(c.config, Vocabulary::from_tokens(c.vocab_tokens), c.params, corpus_lines);
  if (c.params.size() != t.params_.size()) throw ConfigError("checkpoint parameters do not match the config");
  t.step_ = c.step;
  t.adam_.state() = c.adam;
  t.queue_ = MemoryQueue::restore(c.queue_capacity, c.queue_dim, c.queue_rows);
  t.batches_.restore(c.iterator_state);
  return t;
}

double Trainer::temperature(std::uint64_t t) const {
  const auto& mode = config_.model.temperature_mode;
  if (!mode.adaptive) return TemperatureSchedule::fixed(mode.fixed)(static_cast<double>(t));
  return TemperatureSchedule::adaptive(config_.model.total_steps)(static_cast<double>(t));
}

double Trainer::learning_rate(std::uint64_t t) const {
  const auto& m = config_.model;
  return LrSchedule{m.warmup_steps, m.total_steps, m.peak_lr}(t);
}

MetricsRow Trainer::train_step() {
  const EncoderConfig& m = config_.model;
  const std::uint64_t t = step_ + 1;
  if (t > m.total_steps) throw ContractError("train_step beyond total_steps");

  const std::vector<TokenSequence> batch = batches_.next();
  Rng corrupt_rng = derive_rng(m.seed, t, kCorruptStream);
  std::vector<CorruptedPair> pairs;
  pairs.reserve(batch.size());
  for (const auto& seq : batch) {
    pairs.push_back(m.noise_kind == NoiseKind::kMask ? mask_corrupt(seq, m.mask_rate, m.vocab_size, corrupt_rng)
                                                     : shuffle_corrupt(seq, m.shuffle_window, corrupt_rng));
  }
  std::vector<TokenSequence> corrupted;
  corrupted.reserve(pairs.size());
  for (const auto& p : pairs) corrupted.push_back(p.corrupted);

  Tape tape;
  Rng drop_x = derive_rng(m.seed, t, kOriginalDropout);
  Rng drop_xh = derive_rng(m.seed, t, kCorruptedDropout);
  const EncodedBatch enc_x = encode_packed(tape, params_, m, batch, true, drop_x);
  const EncodedBatch enc_xh = encode_packed(tape, params_, m, corrupted, true, drop_xh);
  Var s = aggregate(tape, params_, m, enc_x);
  Var s_hat = aggregate(tape, params_, m, enc_xh);

  const double tau = temperature(t);
  Var capt = capt_loss(tape, s, s_hat, queue_.snapshot(), tau);
  if (config_.capt_average) capt = ops::scale(capt, 1.0 / static_cast<double>(2 * batch.size()));

  std::optional<Var> mlm;
  const MlmBatchLabels labels = collect_mlm_labels(pairs);
  if (!labels.empty()) mlm = mlm_loss(tape, params_, enc_xh, labels);

  std::optional<Var> total;
  if (config_.capt_weight != 0.0) total = config_.capt_weight == 1.0 ? capt : ops::scale(capt, config_.capt_weight);
  if (mlm) total = total ? ops::add(*total, *mlm) : *mlm;
  if (!total) throw ConfigError("step has neither a CAPT nor an MLM term");

  MetricsRow row;
  row.step = t;
  row.lr = learning_rate(t);
  row.tau = tau;
  row.mlm_loss = mlm ? mlm->value().item() : std::numeric_limits<double>::quiet_NaN();
  row.capt_loss = capt.value().item();
  row.total_loss = total->value().item();
  row.mean_pair_cosine = mean_pair_cosine(s.value(), s_hat.value());
  if (!std::isfinite(row.total_loss)) throw NumericError("non-finite loss at step " + std::to_string(t));

  adam_.step(params_, tape.backward(*total), row.lr);
  queue_.enqueue_batch(s.value(), s_hat.value());
  step_ = t;
  row.queue_fill = queue_.size();
  return row;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.vocab_tokens = vocab_.tokens();
  c.params = params_;
  c.step = step_;
  c.adam = adam_.state();
  c.queue_capacity = queue_.capacity();
  c.queue_dim = queue_.dim();
  for (std::size_t i = 0; i < queue_.size(); ++i) {
    const auto e = queue_.entry(i);
    c.queue_rows.insert(c.queue_rows.end(), e.begin(), e.end());
  }
  c.iterator_state = batches_.state();
  return c;
}

PreparedRun prepare_run(RunConfig config) {
  if (config.corpus.empty()) throw ConfigError("corpus path is not set");
  PreparedRun run;
  run.lines = read_lines(config.corpus);
  run.vocab = config.vocab.empty() ? Vocabulary::build_from_lines(run.lines, config.model.vocab_size)
                                   : Vocabulary::load(config.vocab);
  if (run.vocab.size() > config.model.vocab_size) {
    throw ConfigError("vocabulary file has " + std::to_string(run.vocab.size()) + " tokens, more than vocab_size");
  }
  config.model.vocab_size = run.vocab.size();
  config.validate();
  run.config = std::move(config);
  return run;
}

PretrainResult run_pretrain(const RunConfig& config, const PretrainOptions& options) {
  PreparedRun run = prepare_run(config);
  std::optional<Trainer> trainer;
  if (options.resume) {
    const Checkpoint ck = load_checkpoint(*options.resume);
    if (!(ck.config.model == run.config.model)) throw ConfigError("checkpoint was trained with a different model config");
    if (Vocabulary::from_tokens(ck.vocab_tokens).fingerprint() != run.vocab.fingerprint()) {
      throw ConfigError("checkpoint was trained with a different vocabulary");
    }
    Checkpoint merged = ck;
    merged.config = run.config;
    trainer.emplace(Trainer::resume(merged, run.lines));
  } else {
    trainer.emplace(run.config, run.vocab, run.lines);
  }

  const auto& out_dir = run.config.out_dir;
  std::filesystem::create_directories(out_dir);
  run.vocab.save(out_dir / "vocab.txt");

  PretrainResult result;
  result.metrics = out_dir / "metrics.csv";
  std::vector<std::string> kept{metrics_header()};
  if (options.resume && std::filesystem::exists(result.metrics)) {
    for (const auto& r : read_metrics(result.metrics)) {
      if (r.step <= trainer->step()) kept.push_back(format_metrics_row(r));
    }
  }
  write_lines(result.metrics, kept);
  std::ofstream metrics(result.metrics, std::ios::app);
  if (!metrics) throw IoError("cannot append to '" + result.metrics.string() + "'");

  const std::uint64_t total = run.config.model.total_steps;
  std::uint64_t last_saved = std::numeric_limits<std::uint64_t>::max();
  auto save = [&] {
    result.final_checkpoint = checkpoint_path(out_dir, trainer->step());
    save_checkpoint(result.final_checkpoint, trainer->checkpoint());
    last_saved = trainer->step();
  };
  if (trainer->step() == 0) save();

  while (trainer->step() < total) {
    const MetricsRow row = trainer->train_step();
    metrics << format_metrics_row(row) << '\n' << std::flush;
    result.rows.push_back(row);
    if (options.log && (row.step % options.log_every == 0 || row.step == total)) {
      *options.log << "step " << row.step << "/" << total << "  mlm " << row.mlm_loss << "  capt " << row.capt_loss
                    << "  cos " << row.mean_pair_cosine << "  tau " << row.tau << "  lr " << row.lr << std::endl;
    }
    if (row.step % run.config.checkpoint_interval == 0) save();
  }
  if (last_saved != trainer->step()) save();
  return result;
}

}  // namespace capt
