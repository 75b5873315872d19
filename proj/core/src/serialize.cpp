#include "dfnet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dfnet {

static_assert(std::endian::native == std::endian::little,
              "DFT1 I/O assumes a little-endian host");

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is, std::int64_t& offset) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4)
    throw IoError("malformed DFT1: truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_dft1(std::ostream& os, const Tensor<float>& t) {
  os.write("DFT1", 4);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(float)));
}

void save_dft1(const std::string& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save_dft1(os, t);
  if (!os) throw IoError("write failed for " + path);
}

Tensor<float> load_dft1(std::istream& is) {
  std::int64_t offset = 0;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "DFT1", 4) != 0)
    throw IoError("malformed DFT1: bad magic at byte offset 0");
  offset = 4;
  const std::uint32_t rank = get_u32(is, offset);
  if (rank == 0 || rank > 8)
    throw IoError("malformed DFT1: implausible rank " + std::to_string(rank) +
                  " at byte offset 4");
  Shape shape;
  std::int64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(is, offset);
    if (d == 0)
      throw IoError("malformed DFT1: zero dimension at byte offset " + std::to_string(offset - 4));
    shape.push_back(static_cast<int>(d));
    count *= d;
  }
  std::vector<float> data(static_cast<std::size_t>(count));
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
    throw IoError("malformed DFT1: payload truncated at byte offset " +
                  std::to_string(offset + is.gcount()));
  return Tensor<float>(std::move(shape), std::move(data));
}

Tensor<float> load_dft1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return load_dft1(is);
}

std::vector<char> dft1_bytes(const Tensor<float>& t) {
  std::ostringstream os(std::ios::binary);
  save_dft1(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor<float> dft1_from_bytes(const std::vector<char>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return load_dft1(is);
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "DFNET-CKPT v1\n";
  os << "manifest " << manifest.size() << "\n";
  for (const auto& [k, v] : manifest) os << k << " " << v << "\n";
  os << "tensors " << tensors.size() << "\n";
  for (const auto& [name, t] : tensors) {
    const auto bytes = dft1_bytes(t);
    os << name << " " << bytes.size() << "\n";
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os << "\n";
  }
  if (!os) throw IoError("write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "DFNET-CKPT v1")
    throw IoError(path + ": not a checkpoint file (bad header)");

  Checkpoint ck;
  std::size_t n = 0;
  if (!(is >> line >> n) || line != "manifest") throw IoError(path + ": bad manifest header");
  is.ignore();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw IoError(path + ": truncated manifest");
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw IoError(path + ": malformed manifest line '" + line + "'");
    ck.manifest[line.substr(0, sp)] = line.substr(sp + 1);
  }
  std::size_t m = 0;
  if (!(is >> line >> m) || line != "tensors") throw IoError(path + ": bad tensor header");
  is.ignore();
  for (std::size_t i = 0; i < m; ++i) {
    std::string name;
    std::size_t nbytes = 0;
    if (!(is >> name >> nbytes)) throw IoError(path + ": truncated tensor entry");
    is.ignore();
    std::vector<char> bytes(nbytes);
    is.read(bytes.data(), static_cast<std::streamsize>(nbytes));
    if (is.gcount() != static_cast<std::streamsize>(nbytes))
      throw IoError(path + ": truncated tensor payload for " + name);
    is.ignore();
    ck.tensors.emplace(name, dft1_from_bytes(bytes));
  }
  return ck;
}

const Tensor<float>& Checkpoint::tensor(const std::string& key) const {
  auto it = tensors.find(key);
  if (it == tensors.end()) throw IoError("checkpoint is missing tensor '" + key + "'");
  return it->second;
}

std::string Checkpoint::manifest_at(const std::string& key) const {
  auto it = manifest.find(key);
  if (it == manifest.end()) throw IoError("checkpoint is missing manifest key '" + key + "'");
  return it->second;
}

}  // namespace dfnet
