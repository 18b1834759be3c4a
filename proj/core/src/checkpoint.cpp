#include "kgdial/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kgdial/error.hpp"

namespace kgdial {
namespace {

constexpr char kMagic[8] = {'K', 'G', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated", pos_);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const nlohmann::json& descriptor, const ParameterSet& params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string desc = descriptor.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
  out += desc;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::string& name = params.name(p);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Tensor& t = params[p];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (Real v : t.values()) {
      put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw FormatError("not a kgdial checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const auto desc_len = in.get<std::uint32_t>();
  const std::size_t desc_at = in.position();
  try {
    ckpt.descriptor = nlohmann::json::parse(in.take(desc_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint descriptor: ") + e.what(), desc_at + e.byte);
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t p = 0; p < count; ++p) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.take(name_len);
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<Real>(std::bit_cast<float>(in.get<std::uint32_t>()));
    }
    ckpt.params.add(name, std::move(t));
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint", in.position());
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& descriptor,
                     const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(descriptor, params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

void round_to_storage_precision(ParameterSet& params) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Real& v : params[p].values()) v = static_cast<Real>(static_cast<float>(v));
  }
}

}  // namespace kgdial
