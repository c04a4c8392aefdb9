#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hhic/binary_io.hpp"
#include "hhic/error.hpp"
#include "hhic/harness.hpp"

namespace hhic {

namespace {

constexpr char kMagic[8] = {'H', 'H', 'I', 'C', 'C', 'K', 'P', 'T'};

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) io::write_pod<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
}

Tensor<float> read_tensor(std::istream& in) {
  const auto rank = io::read_pod<std::uint32_t>(in);
  if (rank > 8) throw ParseError("checkpoint: implausible tensor rank");
  std::vector<std::size_t> shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = io::read_pod<std::uint64_t>(in);
    count *= d;
  }
  if (count > (std::uint64_t(1) << 34)) throw ParseError("checkpoint: implausible tensor size");
  Tensor<float> t(shape);
  in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
  if (!in) throw ParseError("checkpoint: truncated tensor data");
  return t;
}

}  // namespace

void Checkpoint::write(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(kMagic, sizeof(kMagic));
    io::write_pod<std::uint32_t>(out, kCheckpointVersion);
    io::write_string(out, config.to_config_text());
    io::write_pod<std::int32_t>(out, num_classes);
    io::write_pod<std::int32_t>(out, next_epoch);
    io::write_pod<std::int64_t>(out, global_step);
    io::write_pod<double>(out, best_val_ap50);
    io::write_pod<std::uint64_t>(out, params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      io::write_string(out, param_names[i]);
      write_tensor(out, params[i]);
      write_tensor(out, momentum[i]);
    }
    io::write_pod<std::uint8_t>(out, bank ? 1 : 0);
    if (bank) bank->write(out);
    io::write_pod<std::uint64_t>(out, rng_states.size());
    for (const auto& s : rng_states) io::write_string(out, s);
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint Checkpoint::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw ParseError(path + ": not a checkpoint file");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = TrainConfig::from_config(KeyValueConfig::parse_string(io::read_string(in), path));
  ck.num_classes = io::read_pod<std::int32_t>(in);
  ck.next_epoch = io::read_pod<std::int32_t>(in);
  ck.global_step = io::read_pod<std::int64_t>(in);
  ck.best_val_ap50 = io::read_pod<double>(in);
  const auto n = io::read_pod<std::uint64_t>(in);
  if (n > 4096) throw ParseError(path + ": implausible parameter count");
  for (std::uint64_t i = 0; i < n; ++i) {
    ck.param_names.push_back(io::read_string(in));
    ck.params.push_back(read_tensor(in));
    ck.momentum.push_back(read_tensor(in));
  }
  if (io::read_pod<std::uint8_t>(in)) ck.bank = MemoryBank::read(in);
  const auto r = io::read_pod<std::uint64_t>(in);
  if (r > 64) throw ParseError(path + ": implausible random-state count");
  for (std::uint64_t i = 0; i < r; ++i) ck.rng_states.push_back(io::read_string(in));
  return ck;
}

Detector<float> Checkpoint::make_detector() const {
  Detector<float> d(config.detector_config(num_classes), 0);
  auto& p = d.parameters();
  if (p.size() != params.size()) throw ConfigError("checkpoint parameter count does not match the detector");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].name != param_names[i] || p[i].value.shape() != params[i].shape())
      throw ConfigError("checkpoint parameter '" + param_names[i] + "' does not match the detector");
    p[i].value = params[i];
  }
  return d;
}

}  // namespace hhic
