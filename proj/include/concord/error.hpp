#pragma once

#include <stdexcept>
#include <string>

namespace concord {

/// Root of every exception thrown by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NIfTI decoding / encoding
class format_error : public error {
 public:
  using error::error;
};
class MalformedHeader : public format_error {
 public:
  using format_error::format_error;
};
class UnsupportedDatatype : public format_error {
 public:
  using format_error::format_error;
};
class UnsupportedDimensionality : public format_error {
 public:
  using format_error::format_error;
};
class UnsupportedScaling : public format_error {
 public:
  using format_error::format_error;
};
class NegativeLabel : public format_error {
 public:
  using format_error::format_error;
};
class LabelOverflow : public format_error {
 public:
  using format_error::format_error;
};

// Mapping tables
class mapping_error : public error {
 public:
  using error::error;
};
class DuplicateLabel : public mapping_error {
 public:
  using mapping_error::mapping_error;
};
class MissingRequiredColumn : public mapping_error {
 public:
  using mapping_error::mapping_error;
};
class BadColor : public mapping_error {
 public:
  using mapping_error::mapping_error;
};

// Manifest
class manifest_error : public error {
 public:
  using error::error;
};
class MissingFile : public manifest_error {
 public:
  using manifest_error::manifest_error;
};
class DuplicateSeries : public manifest_error {
 public:
  using manifest_error::manifest_error;
};
class UnknownMappingRef : public manifest_error {
 public:
  using manifest_error::manifest_error;
};

// Report
class UnknownPlaceholder : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

}  // namespace concord
