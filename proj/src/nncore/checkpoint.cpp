#include "cqsched/nncore/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cqsched/errors.hpp"

namespace cqsched::nn {

namespace {
constexpr const char* kMagic = "cqsched-checkpoint";
constexpr int kVersion = 1;
}  // namespace

void save_checkpoint(const StateDict& sd, std::ostream& out) {
  out << kMagic << " v" << kVersion << ' ' << sd.size() << '\n';
  char buf[64];
  for (const auto& [name, t] : sd) {
    out << "tensor " << name << ' ' << t.rank();
    for (int d : t.shape) out << ' ' << d;
    out << '\n';
    for (size_t i = 0; i < t.v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t.v[i]);
      out << buf << (i + 1 == t.v.size() ? '\n' : ' ');
    }
  }
}

void save_checkpoint(const StateDict& sd, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot open " + path + " for writing");
  save_checkpoint(sd, out);
}

StateDict load_checkpoint(std::istream& in) {
  std::string magic, version;
  size_t count = 0;
  if (!(in >> magic >> version >> count) || magic != kMagic)
    throw DataFormatError("not a checkpoint file");
  if (version != "v1") throw DataFormatError("unsupported checkpoint version " + version);
  StateDict sd;
  for (size_t k = 0; k < count; ++k) {
    std::string tag, name;
    int rank = 0;
    if (!(in >> tag >> name >> rank) || tag != "tensor" || rank < 1 || rank > 2)
      throw DataFormatError("checkpoint: malformed tensor header");
    std::vector<int> shape(static_cast<size_t>(rank));
    size_t numel = 1;
    for (int& d : shape) {
      if (!(in >> d) || d <= 0) throw DataFormatError("checkpoint: bad tensor shape");
      numel *= static_cast<size_t>(d);
    }
    Tensor t = Tensor::zeros(shape);
    for (size_t i = 0; i < numel; ++i)
      if (!(in >> t.v[i])) throw DataFormatError("checkpoint: truncated tensor " + name);
    if (!sd.emplace(name, std::move(t)).second)
      throw DataFormatError("checkpoint: duplicate tensor " + name);
  }
  return sd;
}

StateDict load_checkpoint_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace cqsched::nn
