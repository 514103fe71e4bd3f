// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vlalign {

// Byte-level tokenizer for the toy LM: every UTF-8 byte is one token id.
// Id 0 is reserved for end-of-sequence (NUL never occurs in real text).
class ByteTokenizer {
 public:
  static constexpr int kEosId = 0;

  explicit ByteTokenizer(int vocab_size = 256);

  std::vector<int> encode(std::string_view text) const;
  // Drops EOS and everything after it; invalid UTF-8 is replaced with U+FFFD
  // so that decoded text can always be serialized as JSON.
  std::string decode(const std::vector<int>& ids) const;

  int vocab_size() const { return vocab_size_; }
  int eos_id() const { return kEosId; }

 private:
  int vocab_size_;
};

// Replaces invalid UTF-8 sequences with U+FFFD.
std::string sanitize_utf8(std::string_view s);

}  // namespace vlalign
