#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mmdgm/errors.hpp"
#include "mmdgm/tape.hpp"
#include "mmdgm/tensor.hpp"

namespace mmdgm {

// Binary array bundle. Layout: 4-byte magic "MMDG", then per entry
//   u32 name_len | name bytes | u32 rank | u32 dims[rank] | float64 payload
// all little-endian, entries back to back until end of file.

inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'D', 'G'};

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  bool done() const { return pos >= buf.size(); }

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos) + " reading " +
                        what);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string encode_arrays(const std::vector<NamedArray>& arrays) {
  std::string out(kCheckpointMagic, 4);
  for (const auto& a : arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    std::size_t n = 1;
    for (int d : a.shape) {
      if (d <= 0) throw ContractError("checkpoint entry '" + a.name + "' has dim " +
                                      std::to_string(d));
      detail::put_u32(out, static_cast<std::uint32_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    if (a.data.size() != n)
      throw ContractError("checkpoint entry '" + a.name + "' payload size mismatch");
    for (double v : a.data) detail::put_f64(out, v);
  }
  return out;
}

inline std::vector<NamedArray> decode_arrays(const std::string& buf) {
  if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint magic mismatch at byte 0");
  detail::ByteReader r{buf, 4};
  std::vector<NamedArray> arrays;
  while (!r.done()) {
    NamedArray a;
    std::uint32_t name_len = r.u32("name length");
    a.name = r.bytes(name_len, "name");
    std::uint32_t rank = r.u32("rank");
    if (rank > 2)
      throw FormatError("checkpoint entry '" + a.name + "' has rank " + std::to_string(rank) +
                        " at byte " + std::to_string(r.pos - 4));
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = r.u32("dim");
      if (d == 0)
        throw FormatError("checkpoint entry '" + a.name + "' has a zero dim at byte " +
                          std::to_string(r.pos - 4));
      a.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    a.data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) a.data.push_back(r.f64("payload"));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("short write to '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return buf;
}

inline void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
  write_file(path, encode_arrays(arrays));
}

inline std::vector<NamedArray> load_arrays(const std::string& path) {
  return decode_arrays(read_file(path));
}

// Parameter stores serialize in insertion order; values pass through double.
template <class S>
std::vector<NamedArray> store_to_arrays(const ParamStore<S>& st) {
  std::vector<NamedArray> arrays;
  for (int i = 0; i < st.size(); ++i) {
    const auto& e = st.at(i);
    NamedArray a;
    a.name = e.name;
    a.shape = e.value.shape;
    a.data.reserve(static_cast<std::size_t>(e.value.size()));
    for (Eigen::Index k = 0; k < e.value.size(); ++k)
      a.data.push_back(static_cast<double>(e.value.data[k]));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

template <class S>
void arrays_into_store(const std::vector<NamedArray>& arrays, ParamStore<S>& st) {
  for (const auto& a : arrays) {
    Tensor<S> t = Tensor<S>::zeros(a.shape.empty() ? std::vector<int>{} : a.shape);
    if (static_cast<std::size_t>(t.size()) != a.data.size())
      throw FormatError("checkpoint entry '" + a.name + "' payload size mismatch");
    for (Eigen::Index k = 0; k < t.size(); ++k)
      t.data[k] = static_cast<S>(a.data[static_cast<std::size_t>(k)]);
    st.add(a.name, std::move(t));
  }
}

}  // namespace mmdgm
