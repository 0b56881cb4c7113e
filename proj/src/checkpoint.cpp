#include <cstring>
#include <fstream>

#include "dcda/trainer.hpp"

namespace dcda::trainer {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'D', 'A', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IOError("truncated checkpoint");
  return v;
}

std::string read_string(std::istream& in) {
  const auto n = read_u64(in);
  if (n > (1u << 30)) throw IOError("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IOError("truncated checkpoint");
  return s;
}

}  // namespace

void Checkpoint::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, meta.size());
    for (const auto& [k, v] : meta) {
      write_string(out, k);
      write_string(out, v);
    }
    write_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
      write_string(out, name);
      write_u64(out, static_cast<std::uint64_t>(t.rank()));
      for (Index d : t.shape().dims()) write_u64(out, static_cast<std::uint64_t>(d));
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    if (!out) throw IOError("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw StateError(path.string() + " is not a checkpoint");
  Checkpoint ck;
  const auto n_meta = read_u64(in);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = read_string(in);
    ck.meta[k] = read_string(in);
  }
  const auto n_tensors = read_u64(in);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_string(in);
    const auto rank = read_u64(in);
    if (rank > 8) throw IOError("corrupt checkpoint tensor rank");
    std::vector<Index> dims;
    for (std::uint64_t r = 0; r < rank; ++r) dims.push_back(static_cast<Index>(read_u64(in)));
    Tensor<Real> t{Shape(dims)};
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    if (!in) throw IOError("truncated checkpoint tensor " + name);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

void Checkpoint::put(const std::string& prefix, const nn::NamedParameters<Real>& params) {
  for (const auto& [name, p] : params) tensors[prefix + name] = p.value();
}

void Checkpoint::get(const std::string& prefix, const nn::NamedParameters<Real>& params) const {
  for (const auto& [name, p] : params) {
    const auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw StateError("checkpoint has no tensor " + prefix + name);
    if (it->second.shape() != p.value().shape()) {
      throw StateError("checkpoint tensor " + prefix + name + " has shape " + it->second.shape().str() + ", model expects " +
                       p.value().shape().str());
    }
    Var<Real> handle = p;
    handle.mutable_value() = it->second;
  }
}

void Checkpoint::put_optimizer(const std::string& prefix, const nn::Adam<Real>& optimizer) {
  for (auto& [k, v] : optimizer.state(prefix)) tensors[k] = v;
  meta[prefix + "steps"] = std::to_string(optimizer.steps());
}

void Checkpoint::get_optimizer(const std::string& prefix, nn::Adam<Real>& optimizer) const {
  optimizer.load_state(prefix, tensors, std::stol(require(prefix + "steps")));
}

const std::string& Checkpoint::require(const std::string& key) const {
  const auto it = meta.find(key);
  if (it == meta.end()) throw StateError("checkpoint is missing '" + key + "'");
  return it->second;
}

}  // namespace dcda::trainer
