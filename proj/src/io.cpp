#include "gcr/io.hpp"

#include <hdf5.h>

namespace gcr {

namespace {

// Intermediate groups created on demand so names like "extractor/conv0/W"
// work without explicit group management at call sites.
void ensure_groups(hid_t file, const std::string& name) {
    std::string::size_type pos = 0;
    while ((pos = name.find('/', pos)) != std::string::npos) {
        const std::string group = name.substr(0, pos);
        if (!group.empty() && H5Lexists(file, group.c_str(), H5P_DEFAULT) <= 0) {
            hid_t g = H5Gcreate2(file, group.c_str(), H5P_DEFAULT, H5P_DEFAULT, H5P_DEFAULT);
            require<IngestionError>(g >= 0, "hdf5: cannot create group " + group);
            H5Gclose(g);
        }
        ++pos;
    }
}

void write_doubles(hid_t file, const std::string& name, const double* data, hsize_t rows,
                   hsize_t cols) {
    ensure_groups(file, name);
    const hsize_t dims[2] = {rows, cols};
    hid_t space = H5Screate_simple(2, dims, nullptr);
    hid_t dset = H5Dcreate2(file, name.c_str(), H5T_NATIVE_DOUBLE, space, H5P_DEFAULT,
                            H5P_DEFAULT, H5P_DEFAULT);
    require<IngestionError>(dset >= 0, "hdf5: cannot create dataset " + name);
    herr_t st = H5Dwrite(dset, H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, data);
    H5Dclose(dset);
    H5Sclose(space);
    require<IngestionError>(st >= 0, "hdf5: write failed for " + name);
}

hid_t open_dataset(hid_t file, const std::string& name) {
    hid_t dset = H5Dopen2(file, name.c_str(), H5P_DEFAULT);
    require<IngestionError>(dset >= 0, "hdf5: missing dataset " + name);
    return dset;
}

}  // namespace

ArrayFile ArrayFile::create(const std::string& path) {
    hid_t file = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
    require<IngestionError>(file >= 0, "hdf5: cannot create " + path);
    return ArrayFile(file);
}

ArrayFile ArrayFile::open_readonly(const std::string& path) {
    hid_t file = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
    require<IngestionError>(file >= 0, "hdf5: cannot open " + path);
    return ArrayFile(file);
}

ArrayFile::~ArrayFile() {
    if (file_ >= 0) H5Fclose(static_cast<hid_t>(file_));
}

ArrayFile::ArrayFile(ArrayFile&& other) noexcept : file_(other.file_) { other.file_ = -1; }

void ArrayFile::write(const std::string& name, const Mat& m) {
    write_doubles(static_cast<hid_t>(file_), name, m.data(), static_cast<hsize_t>(m.rows()),
                  static_cast<hsize_t>(m.cols()));
}

void ArrayFile::write(const std::string& name, const Vec& v) {
    write_doubles(static_cast<hid_t>(file_), name, v.data(), static_cast<hsize_t>(v.size()), 1);
}

void ArrayFile::write(const std::string& name, const std::vector<int>& v) {
    ensure_groups(static_cast<hid_t>(file_), name);
    const hsize_t dims[1] = {v.size()};
    hid_t space = H5Screate_simple(1, dims, nullptr);
    hid_t dset = H5Dcreate2(static_cast<hid_t>(file_), name.c_str(), H5T_NATIVE_INT, space,
                            H5P_DEFAULT, H5P_DEFAULT, H5P_DEFAULT);
    require<IngestionError>(dset >= 0, "hdf5: cannot create dataset " + name);
    herr_t st = H5Dwrite(dset, H5T_NATIVE_INT, H5S_ALL, H5S_ALL, H5P_DEFAULT, v.data());
    H5Dclose(dset);
    H5Sclose(space);
    require<IngestionError>(st >= 0, "hdf5: write failed for " + name);
}

void ArrayFile::write_string(const std::string& name, const std::string& s) {
    ensure_groups(static_cast<hid_t>(file_), name);
    hid_t type = H5Tcopy(H5T_C_S1);
    H5Tset_size(type, s.empty() ? 1 : s.size());
    hid_t space = H5Screate(H5S_SCALAR);
    hid_t dset = H5Dcreate2(static_cast<hid_t>(file_), name.c_str(), type, space, H5P_DEFAULT,
                            H5P_DEFAULT, H5P_DEFAULT);
    require<IngestionError>(dset >= 0, "hdf5: cannot create dataset " + name);
    herr_t st = H5Dwrite(dset, type, H5S_ALL, H5S_ALL, H5P_DEFAULT, s.empty() ? "\0" : s.data());
    H5Dclose(dset);
    H5Sclose(space);
    H5Tclose(type);
    require<IngestionError>(st >= 0, "hdf5: write failed for " + name);
}

Mat ArrayFile::read_mat(const std::string& name) const {
    hid_t dset = open_dataset(static_cast<hid_t>(file_), name);
    hid_t space = H5Dget_space(dset);
    hsize_t dims[2] = {1, 1};
    const int ndims = H5Sget_simple_extent_ndims(space);
    require<IngestionError>(ndims >= 1 && ndims <= 2, "hdf5: unexpected rank for " + name);
    H5Sget_simple_extent_dims(space, dims, nullptr);
    if (ndims == 1) {
        dims[1] = 1;
    }
    Mat m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    herr_t st = H5Dread(dset, H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, m.data());
    H5Sclose(space);
    H5Dclose(dset);
    require<IngestionError>(st >= 0, "hdf5: read failed for " + name);
    return m;
}

Vec ArrayFile::read_vec(const std::string& name) const {
    Mat m = read_mat(name);
    require<IngestionError>(m.cols() == 1, "hdf5: expected column vector in " + name);
    Vec v(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) v(i) = m(i, 0);
    return v;
}

std::vector<int> ArrayFile::read_ints(const std::string& name) const {
    hid_t dset = open_dataset(static_cast<hid_t>(file_), name);
    hid_t space = H5Dget_space(dset);
    hsize_t dims[1] = {0};
    require<IngestionError>(H5Sget_simple_extent_ndims(space) == 1,
                            "hdf5: expected 1-d int dataset " + name);
    H5Sget_simple_extent_dims(space, dims, nullptr);
    std::vector<int> v(dims[0]);
    herr_t st = H5Dread(dset, H5T_NATIVE_INT, H5S_ALL, H5S_ALL, H5P_DEFAULT, v.data());
    H5Sclose(space);
    H5Dclose(dset);
    require<IngestionError>(st >= 0, "hdf5: read failed for " + name);
    return v;
}

std::string ArrayFile::read_string(const std::string& name) const {
    hid_t dset = open_dataset(static_cast<hid_t>(file_), name);
    hid_t type = H5Dget_type(dset);
    const std::size_t size = H5Tget_size(type);
    std::string s(size, '\0');
    herr_t st = H5Dread(dset, type, H5S_ALL, H5S_ALL, H5P_DEFAULT, s.data());
    H5Tclose(type);
    H5Dclose(dset);
    require<IngestionError>(st >= 0, "hdf5: read failed for " + name);
    while (!s.empty() && s.back() == '\0') s.pop_back();
    return s;
}

bool ArrayFile::has(const std::string& name) const {
    return H5Lexists(static_cast<hid_t>(file_), name.c_str(), H5P_DEFAULT) > 0;
}

}  // namespace gcr
