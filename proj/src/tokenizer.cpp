// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/tokenizer.hpp"

#include <stdexcept>

namespace vlalign {

ByteTokenizer::ByteTokenizer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 256) {
    throw std::invalid_argument("ByteTokenizer needs vocab_size >= 256, got " +
                                std::to_string(vocab_size));
  }
}

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) {
    if (c == kEosId) continue;  // NUL bytes cannot be represented; skip
    ids.push_back(static_cast<int>(c));
  }
  return ids;
}

std::string ByteTokenizer::decode(const std::vector<int>& ids) const {
  std::string bytes;
  bytes.reserve(ids.size());
  for (int id : ids) {
    if (id == kEosId) break;
    if (id < 0 || id >= 256) {
      throw std::invalid_argument("ByteTokenizer::decode: id out of byte range");
    }
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return sanitize_utf8(bytes);
}

std::string sanitize_utf8(std::string_view s) {
  static const char kReplacement[] = "\xEF\xBF\xBD";  // U+FFFD
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    unsigned min_cp;
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      min_cp = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      min_cp = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      min_cp = 0x10000;
    } else {
      out += kReplacement;
      ++i;
      continue;
    }
    if (i + len > s.size()) {
      out += kReplacement;
      ++i;
      continue;
    }
    unsigned cp = c & (0x7F >> len);
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      unsigned char cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok || cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      out += kReplacement;
      ++i;
      continue;
    }
    out.append(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace vlalign
