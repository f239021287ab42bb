#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "planlm/corpus.hpp"
#include "planlm/errors.hpp"

namespace planlm::corpus {

std::vector<Article> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), "ingest");
  std::vector<Article> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Article a;
      a.id = j.at("id").get<std::string>();
      a.title = j.value("title", std::string{});
      a.text = j.at("text").get<std::string>();
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const Article> articles) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& a : articles) {
    nlohmann::ordered_json j;
    j["id"] = a.id;
    j["title"] = a.title;
    j["text"] = a.text;
    out << j.dump() << '\n';
  }
}

std::vector<Article> read_text_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Article> out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::string first;
    std::getline(in, first);
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Article a;
    a.id = f.stem().string();
    a.title = first;
    a.text = rest.find_first_not_of(" \t\r\n") == std::string::npos ? first : rest;
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Article> read_articles(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError(path.string(), "ingest");
  return std::filesystem::is_directory(path) ? read_text_dir(path) : read_jsonl(path);
}

}  // namespace planlm::corpus
