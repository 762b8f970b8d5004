#include "diffstack/checkpoint.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace diffstack {

namespace fs = std::filesystem;

std::string format_real(real x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw CheckpointError("cannot format value");
  return std::string(buf, end);
}

real parse_real(std::string_view s) {
  real x = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw CheckpointError("bad number '" + std::string(s) + "'");
  }
  return x;
}

namespace {

constexpr std::string_view kMagic = "#diffstack-checkpoint 1";

std::string options_string(const CellOptions& o) {
  std::ostringstream s;
  s << "noise=" << (o.noise.enabled ? 1 : 0) << " noise_mu=" << format_real(o.noise.mu)
    << " noise_sigma2=" << format_real(o.noise.sigma2) << " carry_forward=" << (o.carry_forward ? 1 : 0)
    << " literal_noop=" << (o.literal_noop ? 1 : 0) << " inject_candidate_only=" << (o.inject_candidate_only ? 1 : 0);
  return s.str();
}

void write_block(std::ostream& out, std::string_view kind, const NamedMatrix& nm) {
  out << kind << ' ' << nm.name << ' ' << nm.value.rows << ' ' << nm.value.cols << '\n';
  for (std::size_t r = 0; r < nm.value.rows; ++r) {
    for (std::size_t c = 0; c < nm.value.cols; ++c) {
      if (c) out << ' ';
      out << format_real(nm.value(r, c));
    }
    out << '\n';
  }
}

Matrix read_values(std::istream& in, std::size_t rows, std::size_t cols, const std::string& name) {
  Matrix m(rows, cols);
  std::string line;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw CheckpointError("truncated block '" + name + "'");
    std::istringstream ls(line);
    std::string tok;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!(ls >> tok)) throw CheckpointError("short row in block '" + name + "'");
      m(r, c) = parse_real(tok);
    }
    if (ls >> tok) throw CheckpointError("long row in block '" + name + "'");
  }
  return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const Dims& dims = ck.model.dims();
  out << kMagic << '\n';
  out << "family=" << family_name(ck.model.family()) << '\n';
  out << "d=" << dims.vocab << '\n';
  out << "m=" << dims.hidden << '\n';
  out << "k=" << dims.read << '\n';
  out << "seed=" << ck.seed << '\n';
  out << "steps=" << ck.steps << '\n';
  out << "options=" << options_string(ck.model.options) << '\n';
  for (const auto& [k, v] : ck.info) out << k << '=' << v << '\n';
  for (const auto& t : ck.model.params.tensors()) write_block(out, "matrix", t);
  for (const auto& t : ck.state) write_block(out, "state", t);
  out << "end\n";
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  write_checkpoint(out, ck);
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw CheckpointError("not a diffstack checkpoint");
  std::map<std::string, std::string> header;
  Checkpoint ck;
  std::vector<NamedMatrix> matrices;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("matrix ", 0) == 0 || line.rfind("state ", 0) == 0) {
      std::istringstream ls(line);
      std::string kind, name;
      std::size_t rows = 0, cols = 0;
      if (!(ls >> kind >> name >> rows >> cols)) throw CheckpointError("bad block header '" + line + "'");
      NamedMatrix nm{name, read_values(in, rows, cols, name)};
      (kind == "matrix" ? matrices : ck.state).push_back(std::move(nm));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("bad header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!ended) throw CheckpointError("checkpoint is truncated (no 'end' line)");

  auto take = [&](const std::string& key) {
    auto it = header.find(key);
    if (it == header.end()) throw CheckpointError("checkpoint header lacks '" + key + "'");
    std::string v = it->second;
    header.erase(it);
    return v;
  };
  const auto family = parse_family(take("family"));
  if (!family) throw CheckpointError("unknown family in checkpoint");
  Dims dims;
  dims.vocab = std::stoul(take("d"));
  dims.hidden = std::stoul(take("m"));
  dims.read = std::stoul(take("k"));
  ck.seed = std::stoull(take("seed"));
  ck.steps = std::stoull(take("steps"));

  std::istringstream os(take("options"));
  std::string field;
  while (os >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = field.substr(0, eq);
    const std::string v = field.substr(eq + 1);
    CellOptions& o = ck.model.options;
    if (k == "noise") o.noise.enabled = v == "1";
    else if (k == "noise_mu") o.noise.mu = parse_real(v);
    else if (k == "noise_sigma2") o.noise.sigma2 = parse_real(v);
    else if (k == "carry_forward") o.carry_forward = v == "1";
    else if (k == "literal_noop") o.literal_noop = v == "1";
    else if (k == "inject_candidate_only") o.inject_candidate_only = v == "1";
  }
  ck.info = std::move(header);

  ck.model.params = ModelParams::zeros(*family, dims);
  for (auto& t : ck.model.params.tensors()) {
    auto it = std::find_if(matrices.begin(), matrices.end(), [&](const NamedMatrix& m) { return m.name == t.name; });
    if (it == matrices.end()) throw CheckpointError("checkpoint lacks tensor '" + t.name + "'");
    if (!it->value.same_shape(t.value)) throw CheckpointError("tensor '" + t.name + "' has the wrong shape");
    t.value = std::move(it->value);
    matrices.erase(it);
  }
  if (!matrices.empty()) {
    throw CheckpointError("tensor '" + matrices.front().name + "' does not belong to family " +
                          std::string(family_name(*family)));
  }
  return ck;
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace diffstack
