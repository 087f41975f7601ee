#include "grformer/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

#include "grformer/errors.hpp"

namespace grf {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

template <typename T>
void put_scalar(std::string& out, T v) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const Bits bits = std::bit_cast<Bits>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t uint(std::size_t width, const char* what) {
    need(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += width;
    return v;
  }

  std::string str(const char* what) {
    const std::size_t n = uint(4, what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("weights: truncated while reading ") + what);
    }
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string dtype;
  Shape shape;
  std::uint64_t offset = 0;
};

template <typename Stored>
Stored get_scalar(const std::string& bytes, std::size_t at) {
  using Bits = std::conditional_t<sizeof(Stored) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(Stored); ++i) {
    bits |= static_cast<Bits>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return std::bit_cast<Stored>(bits);
}

}  // namespace

template <typename T>
std::string encode_weights(const ModelConfig& cfg, const GrformerParams<T>& params) {
  const NamedTensors<T> named = named_parameters(params);
  std::string out(kWeightsMagic);
  put_str(out, serialize_config(cfg));
  put_u32(out, static_cast<std::uint32_t>(named.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : named) {
    put_str(out, name);
    put_str(out, dtype_name<T>());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    put_u64(out, offset);
    offset += t.numel() * sizeof(T);
  }
  for (const auto& [name, t] : named) {
    for (T v : t.data()) put_scalar(out, v);
  }
  return out;
}

template <typename T>
std::pair<ModelConfig, GrformerParams<T>> decode_weights(const std::string& bytes) {
  const std::size_t magic_len = std::strlen(kWeightsMagic);
  if (bytes.compare(0, magic_len, kWeightsMagic) != 0) {
    throw FormatError("weights: missing GRFW1 magic");
  }
  std::string body = bytes.substr(magic_len);
  Reader r(body);
  const ModelConfig cfg = parse_config(r.str("config"));
  const std::size_t count = r.uint(4, "tensor count");
  std::map<std::string, Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    Entry e;
    e.dtype = r.str("dtype");
    if (e.dtype != "f32" && e.dtype != "f64") throw FormatError("weights: unknown dtype '" + e.dtype + "'");
    const std::size_t rank = r.uint(4, "rank");
    for (std::size_t d = 0; d < rank; ++d) e.shape.push_back(r.uint(8, "shape"));
    e.offset = r.uint(8, "offset");
    if (!entries.emplace(name, std::move(e)).second) {
      throw FormatError("weights: duplicate tensor '" + name + "'");
    }
  }
  const std::size_t data_start = r.pos();

  GrformerParams<T> params = init_parameters<T>(cfg, Rng(0));
  const NamedTensors<T> named = named_parameters(params);
  if (named.size() != entries.size()) {
    throw FormatError("weights: container holds " + std::to_string(entries.size()) +
                      " tensors but the embedded config needs " + std::to_string(named.size()));
  }
  for (const auto& [name, tensor] : named) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw FormatError("weights: missing tensor '" + name + "'");
    const Entry& e = it->second;
    if (e.shape != tensor.shape()) {
      throw FormatError("weights: tensor '" + name + "' has shape " + shape_str(e.shape) +
                        ", config expects " + shape_str(tensor.shape()));
    }
    const std::size_t width = e.dtype == "f32" ? 4 : 8;
    const std::size_t begin = data_start + e.offset;
    if (begin + tensor.numel() * width > body.size()) {
      throw FormatError("weights: data for '" + name + "' runs past end of file");
    }
    Tensor<T> t = tensor;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = width == 4 ? static_cast<T>(get_scalar<float>(body, begin + i * 4))
                          : static_cast<T>(get_scalar<double>(body, begin + i * 8));
    }
  }
  return {cfg, std::move(params)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

template <typename T>
void save_weights(const std::string& path, const ModelConfig& cfg, const GrformerParams<T>& params) {
  write_file(path, encode_weights(cfg, params));
}

template <typename T>
std::pair<ModelConfig, GrformerParams<T>> load_weights(const std::string& path) {
  return decode_weights<T>(read_file(path));
}

template std::string encode_weights(const ModelConfig&, const GrformerParams<float>&);
template std::string encode_weights(const ModelConfig&, const GrformerParams<double>&);
template std::pair<ModelConfig, GrformerParams<float>> decode_weights(const std::string&);
template std::pair<ModelConfig, GrformerParams<double>> decode_weights(const std::string&);
template void save_weights(const std::string&, const ModelConfig&, const GrformerParams<float>&);
template void save_weights(const std::string&, const ModelConfig&, const GrformerParams<double>&);
template std::pair<ModelConfig, GrformerParams<float>> load_weights(const std::string&);
template std::pair<ModelConfig, GrformerParams<double>> load_weights(const std::string&);

}  // namespace grf
