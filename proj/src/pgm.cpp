#include "bunet/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace bunet {

namespace {

[[noreturn]] void pgm_fail(const std::string& path, const std::string& what, std::int64_t offset) {
  fail("read_pgm: " + path + ": " + what + " (at byte " + std::to_string(offset) + ")");
}

// Reads the next decimal token from the header, skipping whitespace and
// '#' comment lines, tracking the byte offset for diagnostics.
int next_header_int(std::ifstream& in, const std::string& path, const char* field) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  if (ch == EOF) pgm_fail(path, std::string("unexpected end of header while reading ") + field,
                          static_cast<std::int64_t>(in.tellg()) < 0 ? 0 : static_cast<std::int64_t>(in.tellg()));
  if (!std::isdigit(ch))
    pgm_fail(path, std::string("expected digit for ") + field + ", got '" + static_cast<char>(ch) + "'",
             static_cast<std::int64_t>(in.tellg()) - 1);
  long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > 1000000) pgm_fail(path, std::string(field) + " is implausibly large",
                              static_cast<std::int64_t>(in.tellg()) - 1);
    ch = in.get();
  }
  if (ch != EOF) in.unget();
  return static_cast<int>(v);
}

}  // namespace

Tensor<float> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_pgm: cannot open '" + path + "'");

  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P' || m1 != '5')
    pgm_fail(path, "not a binary PGM (expected magic 'P5')", 0);

  const int w = next_header_int(in, path, "width");
  const int h = next_header_int(in, path, "height");
  const int maxval = next_header_int(in, path, "maxval");
  if (w <= 0 || h <= 0)
    pgm_fail(path, "non-positive dimensions " + std::to_string(w) + "x" + std::to_string(h),
             static_cast<std::int64_t>(in.tellg()));
  if (maxval != 255)
    pgm_fail(path, "unsupported maxval " + std::to_string(maxval) + " (only 255)",
             static_cast<std::int64_t>(in.tellg()));

  // Exactly one whitespace byte separates the header from the payload.
  const int sep = in.get();
  if (sep == EOF || !std::isspace(sep))
    pgm_fail(path, "missing whitespace separator before payload",
             static_cast<std::int64_t>(in.tellg()) - 1);

  const std::int64_t payload_start = in.tellg();
  const std::size_t expected = static_cast<std::size_t>(w) * h;
  std::vector<unsigned char> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != expected)
    pgm_fail(path, "truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                       std::to_string(got),
             payload_start + static_cast<std::int64_t>(got));

  Tensor<float> t(Shape::nchw(1, 1, h, w));
  for (std::size_t i = 0; i < expected; ++i) t.data()[i] = static_cast<float>(bytes[i]) / 255.0f;
  return t;
}

void write_pgm(const std::string& path, const Tensor<float>& map) {
  if (map.rank() != 4 || map.shape().n() != 1 || map.shape().c() != 1)
    fail("write_pgm: expected a (1,1,H,W) map, got " + map.shape().str());
  const int h = map.shape().h(), w = map.shape().w();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_pgm: cannot open '" + path + "' for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    float v = std::round(map.data()[i] * 255.0f);
    if (v < 0) v = 0;
    if (v > 255) v = 255;
    bytes[i] = static_cast<unsigned char>(v);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("write_pgm: short write to '" + path + "'");
}

}  // namespace bunet
