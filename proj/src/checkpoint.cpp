#include "hpnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "hpnet/errors.hpp"

namespace hpnet {
namespace {

constexpr char kMagic[8] = {'H', 'P', 'N', 'E', 'T', 'C', 'K', 'P'};

template <typename U>
void put_le(std::vector<char>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::vector<char>& buf, const std::string& s) {
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  buf.insert(buf.end(), s.begin(), s.end());
}

class Reader {
 public:
  Reader(std::vector<char> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void bytes(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError("checkpoint " + origin_ + " is truncated");
  }
  std::vector<char> data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<char> buf(kMagic, kMagic + 8);
  put_le<std::uint32_t>(buf, Checkpoint::kVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_str(buf, k);
    put_str(buf, v);
  }
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(buf, name);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(buf, d);
    for (double v : t.values()) put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not an hpnet checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw IoError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_meta = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.meta[k] = r.str();
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    ck.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw IoError("checkpoint " + path.string() + " has trailing bytes");
  return ck;
}

}  // namespace hpnet
