// Copyright 2026 The dimt-tools Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dimt/error.hpp"
#include "dimt/utf8.hpp"

namespace dimt {

// Splits a run of CJK text into words. Implementations return word lengths
// in code points; the lengths sum to the input length.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::string_view name() const = 0;
  virtual std::vector<std::size_t> segment(std::u32string_view run) const = 0;
};

class CharSegmenter final : public Segmenter {
 public:
  std::string_view name() const override { return "char"; }
  std::vector<std::size_t> segment(std::u32string_view run) const override {
    return std::vector<std::size_t>(run.size(), 1);
  }
};

// A small general-purpose lexicon; enough for common function words and
// document vocabulary. Replace with a full dictionary via a lexicon file.
inline const std::vector<std::string_view>& bundled_lexicon() {
  static const std::vector<std::string_view> words = {
      "我们", "你们", "他们", "她们", "它们", "自己", "大家", "这个", "那个", "这些", "那些", "这里", "那里",
      "什么", "怎么", "为什么", "因为", "所以", "但是", "而且", "或者", "如果", "虽然", "然后", "已经", "正在",
      "可以", "可能", "应该", "需要", "必须", "能够", "没有", "不是", "就是", "还是", "只是", "一个", "一些",
      "一起", "一样", "所有", "每个", "其他", "之间", "之后", "之前", "以及", "通过", "根据", "对于", "关于",
      "由于", "例如", "包括", "其中", "进行", "使用", "提供", "支持", "实现", "问题", "方法", "系统", "数据",
      "信息", "结果", "研究", "分析", "模型", "文档", "图像", "文本", "翻译", "机器", "识别", "语言", "中文",
      "英文", "表格", "页面", "内容", "标题", "作者", "摘要", "介绍", "章节", "参考", "文献", "图表", "公式",
      "实验", "训练", "测试", "验证", "性能", "效果", "提高", "增加", "减少", "重要", "主要", "不同", "相同",
      "部分", "全部", "时间", "今天", "明天", "昨天", "现在", "以前", "以后", "世界", "中国", "国家", "公司",
      "用户", "产品", "服务", "网络", "网站", "技术", "软件", "硬件", "计算机", "电脑", "手机", "应用", "程序",
      "开发", "设计", "管理", "工作", "学习", "学生", "老师", "学校", "大学", "朋友", "你好", "谢谢", "欢迎",
      "北京", "上海", "经济", "社会", "文化", "历史", "发展", "变化", "环境", "健康", "安全", "质量", "价格",
      "市场", "用于", "基于", "以上", "以下", "如下", "注意", "说明", "步骤", "操作", "设置", "选择", "点击",
      "下载", "安装", "更新", "版本", "文件", "目录", "名称", "类型", "状态", "错误", "成功", "失败",
  };
  return words;
}

// Greedy forward longest match over a lexicon; characters outside any
// lexicon word become single-character words.
class GreedyLexiconSegmenter final : public Segmenter {
 public:
  GreedyLexiconSegmenter() : GreedyLexiconSegmenter(bundled_lexicon()) {}

  template <typename Words>
  explicit GreedyLexiconSegmenter(const Words& words) {
    for (const auto& w : words) add(std::string_view(w));
  }

  static GreedyLexiconSegmenter from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open segmenter lexicon");
    std::vector<std::string> words;
    for (std::string line; std::getline(in, line);) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      // jieba-style dictionaries carry frequency and tag columns
      if (const auto sp = line.find(' '); sp != std::string::npos) line.resize(sp);
      if (!line.empty()) words.push_back(line);
    }
    return GreedyLexiconSegmenter(words);
  }

  std::string_view name() const override { return "greedy-lexicon"; }

  std::vector<std::size_t> segment(std::u32string_view run) const override {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < run.size();) {
      std::size_t len = std::min(max_len_, run.size() - i);
      for (; len > 1; --len) {
        if (words_.count(std::u32string(run.substr(i, len)))) break;
      }
      out.push_back(len == 0 ? 1 : len);
      i += out.back();
    }
    return out;
  }

 private:
  void add(std::string_view word) {
    std::u32string w;
    for (const auto& cp : utf8::decode(word)) w.push_back(cp.value);
    if (w.empty()) return;
    max_len_ = std::max(max_len_, w.size());
    words_.insert(std::move(w));
  }

  std::unordered_set<std::u32string> words_;
  std::size_t max_len_ = 1;
};

inline std::shared_ptr<const Segmenter> make_segmenter(std::string_view name,
                                                       const std::filesystem::path& lexicon = {}) {
  if (name == "char") return std::make_shared<CharSegmenter>();
  if (name == "greedy-lexicon") {
    if (!lexicon.empty()) return std::make_shared<GreedyLexiconSegmenter>(GreedyLexiconSegmenter::from_file(lexicon));
    return std::make_shared<GreedyLexiconSegmenter>();
  }
  throw UsageError("unknown segmenter '" + std::string(name) + "' (expected greedy-lexicon or char)");
}

}  // namespace dimt
