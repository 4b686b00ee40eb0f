#include "capt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "capt/error.hpp"

namespace capt {

namespace {

constexpr char kMagic[] = "CAPT1";
constexpr std::size_t kMagicLen = 5;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}

  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  void named(const std::map<std::string, Tensor>& m) {
    u64(m.size());
    for (const auto& [name, t] : m) {
      str(name);
      tensor(t);
    }
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, const std::string& where) : in_(in), where_(where) {}

  std::uint64_t u64() {
    unsigned char b[8];
    in_.read(reinterpret_cast<char*>(b), 8);
    if (!in_) fail("truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated");
    return s;
  }
  Tensor tensor() {
    const std::uint64_t rank = u64();
    if (rank == 0 || rank > 8) fail("bad tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    Tensor t(shape);
    for (double& v : t.data()) v = f64();
    return t;
  }
  std::map<std::string, Tensor> named() {
    std::map<std::string, Tensor> m;
    const std::uint64_t n = u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      m.emplace(std::move(name), tensor());
    }
    return m;
  }
  [[noreturn]] void fail(const std::string& what) { throw IoError("checkpoint '" + where_ + "': " + what); }

 private:
  std::ifstream& in_;
  std::string where_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    Writer w(out);
    out.write(kMagic, kMagicLen);
    w.str(serialize_config(c.config));
    w.u64(c.vocab_tokens.size());
    for (const auto& t : c.vocab_tokens) w.str(t);
    w.u64(c.params.size());
    for (const auto& name : c.params.names()) {
      w.str(name);
      w.tensor(c.params.get(name));
    }
    w.u64(c.step);
    w.u64(c.adam.step);
    w.named(c.adam.m);
    w.named(c.adam.v);
    w.u64(c.queue_capacity);
    w.u64(c.queue_dim);
    w.u64(c.queue_dim ? c.queue_rows.size() / c.queue_dim : 0);
    for (double v : c.queue_rows) w.f64(v);
    w.str(c.iterator_state);
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  Reader r(in, path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) r.fail("bad magic");

  Checkpoint c;
  c.config = parse_config(r.str());
  const std::uint64_t vocab_n = r.u64();
  for (std::uint64_t i = 0; i < vocab_n; ++i) c.vocab_tokens.push_back(r.str());
  const std::uint64_t params_n = r.u64();
  for (std::uint64_t i = 0; i < params_n; ++i) {
    std::string name = r.str();
    c.params.add(std::move(name), r.tensor());
  }
  c.step = r.u64();
  c.adam.step = r.u64();
  c.adam.m = r.named();
  c.adam.v = r.named();
  c.queue_capacity = r.u64();
  c.queue_dim = r.u64();
  const std::uint64_t rows = r.u64();
  if (rows > c.queue_capacity) r.fail("queue holds more rows than its capacity");
  c.queue_rows.resize(rows * c.queue_dim);
  for (double& v : c.queue_rows) v = r.f64();
  c.iterator_state = r.str();
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return c;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::uint64_t step) {
  return out_dir / ("checkpoint_" + std::to_string(step) + ".capt");
}

}  // namespace capt
