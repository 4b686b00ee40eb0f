#include "capt/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <unordered_set>

#include "capt/error.hpp"
#include "capt/optimizer.hpp"

namespace capt {

std::string SyntheticLexicon::topic_word(std::size_t topic, std::size_t j) const {
  return "t" + std::to_string(topic) + "w" + std::to_string(j);
}

std::string SyntheticLexicon::filler_word(std::size_t j) const { return "f" + std::to_string(j); }

std::vector<std::string> generate_topic_corpus(const SyntheticLexicon& lex, const TopicCorpusOptions& opt) {
  if (lex.topics == 0 || lex.words_per_topic == 0 || lex.fillers == 0) throw ConfigError("lexicon sizes must be positive");
  if (opt.min_words == 0 || opt.min_words > opt.max_words) throw ConfigError("need 0 < min_words <= max_words");
  Rng rng = derive_rng(opt.seed, 0x636f72707573ULL);
  std::vector<std::string> lines;
  lines.reserve(opt.lines);
  for (std::size_t n = 0; n < opt.lines; ++n) {
    const std::size_t topic = uniform_index(rng, lex.topics);
    const std::size_t len = opt.min_words + uniform_index(rng, opt.max_words - opt.min_words + 1);
    bool is_topic = false;
    std::size_t j = 0;
    std::string line;
    for (std::size_t w = 0; w < len; ++w) {
      if (w > 0 && uniform01(rng) < opt.chain_prob) {
        j = (j + 1) % (is_topic ? lex.words_per_topic : lex.fillers);
      } else {
        is_topic = uniform01(rng) < opt.topic_rate;
        j = uniform_index(rng, is_topic ? lex.words_per_topic : lex.fillers);
      }
      if (w) line.push_back(' ');
      line += is_topic ? lex.topic_word(topic, j) : lex.filler_word(j);
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

namespace {

std::string probe_sentence(const ProbeTask& task, int label, Rng& rng) {
  const auto& lex = task.lexicon;
  const std::size_t len = task.min_words + uniform_index(rng, task.max_words - task.min_words + 1);
  std::string line;
  for (std::size_t w = 0; w < len; ++w) {
    if (w) line.push_back(' ');
    if (uniform01(rng) < task.rho) {
      line += lex.topic_word(task.class_topics[label], uniform_index(rng, lex.words_per_topic));
    } else {
      line += lex.filler_word(uniform_index(rng, lex.fillers));
    }
  }
  return line;
}

LabeledSet balanced_split(const ProbeTask& task, std::size_t n, Rng& rng,
                          const std::unordered_set<std::string>* forbidden) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < n / 2 ? 0 : 1;
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[uniform_index(rng, i)]);
  LabeledSet set;
  for (int label : labels) {
    std::string s = probe_sentence(task, label, rng);
    while (forbidden && forbidden->count(s)) s = probe_sentence(task, label, rng);
    set.texts.push_back(std::move(s));
    set.labels.push_back(label);
  }
  return set;
}

}  // namespace

ProbeDatasets generate_probe_data(const ProbeTask& task, std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  if (n_train % 2 || n_val % 2) throw ConfigError("probe split sizes must be even");
  if (task.class_topics[0] == task.class_topics[1]) throw ConfigError("probe classes need distinct topics");
  if (task.class_topics[0] >= task.lexicon.topics || task.class_topics[1] >= task.lexicon.topics) {
    throw ConfigError("probe topic outside lexicon");
  }
  if (task.min_words == 0 || task.min_words > task.max_words) throw ConfigError("need 0 < min_words <= max_words");
  Rng rng = derive_rng(seed, 0x70726f6265ULL);
  ProbeDatasets out;
  out.train = balanced_split(task, n_train, rng, nullptr);
  const std::unordered_set<std::string> seen(out.train.texts.begin(), out.train.texts.end());
  out.val = balanced_split(task, n_val, rng, &seen);
  return out;
}

void write_labeled_set(const LabeledSet& set, const std::filesystem::path& texts, const std::filesystem::path& labels) {
  write_lines(texts, set.texts);
  std::vector<std::string> lines;
  for (int l : set.labels) lines.push_back(std::to_string(l));
  write_lines(labels, lines);
}

LabeledSet read_labeled_set(const std::filesystem::path& texts, const std::filesystem::path& labels) {
  LabeledSet set;
  set.texts = read_lines(texts);
  for (const auto& l : read_lines(labels)) {
    if (l != "0" && l != "1") throw ConfigError("label file must contain 0 or 1 per line, got '" + l + "'");
    set.labels.push_back(l == "1" ? 1 : 0);
  }
  if (set.texts.size() != set.labels.size()) throw ConfigError("label file and text file differ in line count");
  if (set.texts.empty()) throw EmptyCorpusError("probe split is empty");
  return set;
}

FinetuneOptions finetune_options(const RunConfig& config, std::uint64_t seed) {
  FinetuneOptions opt;
  opt.steps = config.finetune_steps;
  opt.batch = config.finetune_batch;
  opt.eval_interval = config.eval_interval;
  opt.lr = config.finetune_lr;
  opt.weight_decay = config.model.weight_decay;
  opt.seed = seed;
  return opt;
}

std::optional<std::size_t> ProbeCurve::steps_to(double threshold) const {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (accuracy[i] >= threshold) return steps[i];
  }
  return std::nullopt;
}

namespace {

struct Encoded {
  std::vector<TokenSequence> seqs;
  std::vector<int> labels;
};

Encoded encode_set(const Vocabulary& vocab, const LabeledSet& set, std::size_t max_len) {
  Encoded e;
  for (const auto& t : set.texts) e.seqs.push_back(encode(vocab, t, max_len));
  e.labels = set.labels;
  return e;
}

Var head_logits(Tape& tape, const ParamStore& params, const EncoderConfig& config, std::span<const TokenSequence> batch,
                bool train, Rng& rng) {
  const EncodedBatch enc = encode_packed(tape, params, config, batch, train, rng);
  std::vector<std::size_t> cls;
  for (const auto& s : enc.layout.segments) cls.push_back(s.offset);
  auto w = [&](const std::string& n) { return params.bind(tape, n); };
  Var h = ops::gelu(ops::add_bias(ops::matmul(ops::gather_rows(enc.hidden, cls), w("probe.w1")), w("probe.b1")));
  return ops::add_bias(ops::matmul(h, w("probe.w2")), w("probe.b2"));
}

double evaluate(const ParamStore& params, const EncoderConfig& config, const Encoded& data) {
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  Rng unused(0);
  for (std::size_t start = 0; start < data.seqs.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, data.seqs.size());
    Tape tape;
    const Tensor& logits =
        head_logits(tape, params, config, std::span(data.seqs).subspan(start, end - start), false, unused).value();
    for (std::size_t i = start; i < end; ++i) {
      const int pred = logits.at(i - start, 1) > logits.at(i - start, 0) ? 1 : 0;
      correct += pred == data.labels[i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.seqs.size());
}

}  // namespace

ProbeCurve finetune(const PretrainedModel& model, const Vocabulary& vocab, const ProbeDatasets& data,
                    const FinetuneOptions& opt) {
  const EncoderConfig& config = model.config;
  if (vocab.size() != config.vocab_size || vocab.fingerprint() != model.vocab_fingerprint) {
    throw ConfigError("probe vocabulary does not match the checkpoint vocabulary");
  }
  if (opt.batch == 0 || opt.eval_interval == 0) throw ConfigError("finetune batch and eval_interval must be positive");
  if (data.train.texts.empty() || data.val.texts.empty()) throw ConfigError("finetune needs nonempty train and validation sets");

  ParamStore params = model.params;
  {
    Rng init = derive_rng(opt.seed, 0x68656164ULL);
    std::normal_distribution<double> normal(0.0, 0.02);
    const std::size_t d = config.hidden;
    Tensor w1({d, d});
    Tensor w2({d, 2});
    for (double& v : w1.data()) v = normal(init);
    for (double& v : w2.data()) v = normal(init);
    params.add("probe.w1", std::move(w1));
    params.add("probe.b1", Tensor({d}));
    params.add("probe.w2", std::move(w2));
    params.add("probe.b2", Tensor({2}));
  }

  const Encoded train = encode_set(vocab, data.train, config.max_len);
  const Encoded val = encode_set(vocab, data.val, config.max_len);

  const double peak = opt.lr > 0.0 ? opt.lr : config.peak_lr / 5.0;
  const auto warmup = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.warmup_fraction * static_cast<double>(opt.steps))));
  auto lr_at = [&](std::size_t t) {
    if (warmup < opt.steps) return LrSchedule{warmup, opt.steps, peak}(t);
    return peak;
  };

  Adam adam({config.adam_beta1, config.adam_beta2, config.adam_eps, opt.weight_decay});
  Rng batch_rng = derive_rng(opt.seed, 0x6261746368ULL);
  ProbeCurve curve;
  curve.initial_accuracy = evaluate(params, config, val);
  std::vector<TokenSequence> batch(opt.batch);
  std::vector<std::size_t> targets(opt.batch);
  for (std::size_t t = 1; t <= opt.steps; ++t) {
    for (std::size_t i = 0; i < opt.batch; ++i) {
      const std::size_t k = uniform_index(batch_rng, train.seqs.size());
      batch[i] = train.seqs[k];
      targets[i] = static_cast<std::size_t>(train.labels[k]);
    }
    Rng drop = derive_rng(opt.seed, t, 0x64726f70ULL);
    Tape tape;
    Var logits = head_logits(tape, params, config, batch, true, drop);
    Var loss = ops::scale(ops::sum(ops::softmax_xent_rows(logits, targets)), 1.0 / static_cast<double>(opt.batch));
    if (!std::isfinite(loss.value().item())) throw NumericError("non-finite fine-tuning loss at step " + std::to_string(t));
    adam.step(params, tape.backward(loss), lr_at(t));
    if (t % opt.eval_interval == 0) {
      curve.steps.push_back(t);
      curve.accuracy.push_back(evaluate(params, config, val));
    }
  }
  return curve;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

CurveComparison compare_runs(std::span<const ProbeCurve> a, std::span<const ProbeCurve> b, double threshold) {
  if (a.empty() || b.empty()) throw ContractError("compare_runs needs at least one curve per side");
  CurveComparison cmp;
  auto reach = [&](std::span<const ProbeCurve> curves, std::vector<std::optional<std::size_t>>& out) {
    std::vector<double> v;
    for (const auto& c : curves) {
      out.push_back(c.steps_to(threshold));
      v.push_back(out.back() ? static_cast<double>(*out.back()) : std::numeric_limits<double>::infinity());
    }
    const double m = median(v);
    return std::isfinite(m) ? std::optional<double>(m) : std::nullopt;
  };
  cmp.median_a = reach(a, cmp.steps_a);
  cmp.median_b = reach(b, cmp.steps_b);

  const auto& ref = a.front().steps;
  for (const auto& c : a) {
    if (c.steps != ref) throw ContractError("compare_runs: curves use different evaluation steps");
  }
  for (const auto& c : b) {
    if (c.steps != ref) throw ContractError("compare_runs: curves use different evaluation steps");
  }
  cmp.steps = ref;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<double> da;
    std::vector<double> db;
    for (const auto& c : a) da.push_back(c.accuracy[i]);
    for (const auto& c : b) db.push_back(c.accuracy[i]);
    cmp.median_delta.push_back(median(da) - median(db));
  }
  if (!ref.empty()) {
    std::vector<double> fa;
    std::vector<double> fb;
    for (const auto& c : a) fa.push_back(c.accuracy.back());
    for (const auto& c : b) fb.push_back(c.accuracy.back());
    cmp.median_final_a = median(fa);
    cmp.median_final_b = median(fb);
  }

  const double ma = cmp.median_a.value_or(std::numeric_limits<double>::infinity());
  const double mb = cmp.median_b.value_or(std::numeric_limits<double>::infinity());
  cmp.winner = ma < mb ? -1 : (mb < ma ? 1 : 0);
  return cmp;
}

std::string format_comparison(const CurveComparison& cmp, const std::string& name_a, const std::string& name_b,
                              double threshold) {
  auto fmt_steps = [](const std::optional<std::size_t>& s) { return s ? std::to_string(*s) : std::string("not reached"); };
  auto fmt_median = [](const std::optional<double>& m) {
    if (!m) return std::string("not reached");
    std::ostringstream os;
    os << *m;
    return os.str();
  };
  std::ostringstream os;
  os << "steps to " << threshold * 100.0 << "% validation accuracy\n";
  os << std::left << std::setw(8) << "seed" << std::setw(16) << name_a << std::setw(16) << name_b << '\n';
  for (std::size_t i = 0; i < std::max(cmp.steps_a.size(), cmp.steps_b.size()); ++i) {
    os << std::setw(8) << i << std::setw(16) << (i < cmp.steps_a.size() ? fmt_steps(cmp.steps_a[i]) : "-")
       << std::setw(16) << (i < cmp.steps_b.size() ? fmt_steps(cmp.steps_b[i]) : "-") << '\n';
  }
  os << std::setw(8) << "median" << std::setw(16) << fmt_median(cmp.median_a) << std::setw(16) << fmt_median(cmp.median_b)
     << '\n';
  os << "\nstep    median_delta(" << name_a << " - " << name_b << ")\n";
  os << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < cmp.steps.size(); ++i) {
    os << std::setw(8) << cmp.steps[i] << std::showpos << cmp.median_delta[i] << std::noshowpos << '\n';
  }
  os << "\nmedian final accuracy: " << name_a << ' ' << cmp.median_final_a << ", " << name_b << ' ' << cmp.median_final_b
     << '\n';
  os << "winner: " << (cmp.winner < 0 ? name_a : cmp.winner > 0 ? name_b : std::string("tie")) << '\n';
  return os.str();
}

void write_curves_csv(const std::filesystem::path& path, std::span<const ProbeCurve> curves, const std::string& label) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  if (fresh) out << "run,seed,step,accuracy\n";
  out << std::setprecision(17);
  for (std::size_t s = 0; s < curves.size(); ++s) {
    out << label << ',' << s << ',' << 0 << ',' << curves[s].initial_accuracy << '\n';
    for (std::size_t i = 0; i < curves[s].steps.size(); ++i) {
      out << label << ',' << s << ',' << curves[s].steps[i] << ',' << curves[s].accuracy[i] << '\n';
    }
  }
}

}  // namespace capt
