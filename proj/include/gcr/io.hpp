#pragma once

// Named-array container backed by HDF5: the on-disk format for checkpoints
// and synthetic dataset dumps. Doubles and int32 vectors only, flat names
// with '/' separators.

#include "gcr/common.hpp"

#include <string>
#include <vector>

namespace gcr {

class ArrayFile {
  public:
    static ArrayFile create(const std::string& path);
    static ArrayFile open_readonly(const std::string& path);
    ~ArrayFile();

    ArrayFile(ArrayFile&& other) noexcept;
    ArrayFile& operator=(ArrayFile&&) = delete;
    ArrayFile(const ArrayFile&) = delete;
    ArrayFile& operator=(const ArrayFile&) = delete;

    void write(const std::string& name, const Mat& m);
    void write(const std::string& name, const Vec& v);
    void write(const std::string& name, const std::vector<int>& v);
    void write_string(const std::string& name, const std::string& s);

    Mat read_mat(const std::string& name) const;
    Vec read_vec(const std::string& name) const;
    std::vector<int> read_ints(const std::string& name) const;
    std::string read_string(const std::string& name) const;

    bool has(const std::string& name) const;

  private:
    explicit ArrayFile(std::int64_t file) : file_(file) {}
    std::int64_t file_;  // hid_t without leaking hdf5.h into every TU
};

}  // namespace gcr
