#include "scas/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "scas/error.hpp"

namespace scas {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

const char* activation_name(nn::OutputActivation a) {
  return a == nn::OutputActivation::kTanhScaled ? "tanh_scaled" : "identity";
}

}  // namespace

nlohmann::json spec_to_json(const nn::MlpSpec& spec) {
  nlohmann::json j;
  j["widths"] = spec.widths;
  j["output"] = activation_name(spec.output);
  j["scale"] = spec.scale;
  return j;
}

nn::MlpSpec spec_from_json(const nlohmann::json& j) {
  try {
    const auto out = j.at("output").get<std::string>();
    nn::OutputActivation act;
    if (out == "identity") {
      act = nn::OutputActivation::kIdentity;
    } else if (out == "tanh_scaled") {
      act = nn::OutputActivation::kTanhScaled;
    } else {
      fail(ErrorKind::kIo, "unknown output activation '" + out + "'");
    }
    return nn::make_spec(j.at("widths").get<std::vector<std::size_t>>(), act,
                         j.value("scale", std::vector<double>{}));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed network spec: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const nn::MlpParams& params) {
  if (params.size() != header.spec.param_count()) {
    fail(ErrorKind::kShapeMismatch, "checkpoint: parameter count does not match spec");
  }
  nlohmann::json h;
  h["spec"] = spec_to_json(header.spec);
  h["seed"] = header.seed;
  h["step"] = header.step;
  h["count"] = params.size();
  if (!header.extra.empty()) h["extra"] = header.extra;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << h.dump() << '\n';
  out.write(reinterpret_cast<const char*>(params.flat.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kIo, path.string() + ": missing header");

  Checkpoint ck;
  std::size_t count = 0;
  try {
    const auto h = nlohmann::json::parse(line);
    ck.header.spec = spec_from_json(h.at("spec"));
    ck.header.seed = h.at("seed").get<std::uint64_t>();
    ck.header.step = h.at("step").get<std::uint64_t>();
    ck.header.extra = h.value("extra", nlohmann::json::object());
    count = h.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": bad header: " + e.what());
  }
  if (count != ck.header.spec.param_count()) {
    fail(ErrorKind::kIo, path.string() + ": parameter count does not match spec");
  }
  ck.params.flat.resize(count);
  in.read(reinterpret_cast<char*>(ck.params.flat.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    fail(ErrorKind::kIo, path.string() + ": truncated parameter block");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::kIo, path.string() + ": trailing bytes after parameters");
  }
  return ck;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return fmt::format("{:016x}", h);
}

}  // namespace scas
