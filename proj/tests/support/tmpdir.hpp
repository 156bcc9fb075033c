#pragma once

#include <filesystem>
#include <string>

namespace odpg_test {

// Unique scratch directory under the system temp root, removed on scope exit.
class TmpDir {
  public:
    explicit TmpDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / ("odpg_" + tag);
        std::filesystem::remove_all(base);
        std::filesystem::create_directories(base);
        path_ = base.string();
    }
    ~TmpDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::string& path() const { return path_; }
    std::string sub(const std::string& name) const {
        return (std::filesystem::path(path_) / name).string();
    }

  private:
    std::string path_;
};

}  // namespace odpg_test
