#!/usr/bin/env python3
# Copyright 2026 The Charge Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Regenerates the demo bundles, chart images and scripted provider fixture.

The scripted outcomes are designed so the evaluation means can be derived by
hand (see expected_report.csv):
  no_rag        the responder declines, nothing is extracted
  rag_k         the response states only the selected keypoint
  gt_retrieval  the response states every ground-truth keypoint
"""

import json
import os
from itertools import permutations

HERE = os.path.dirname(os.path.abspath(__file__))

NOT_IN_TEXT = "The passage does not give this figure."
NOT_IN_CHART = "The chart does not show this."
DECLINE = "I could not find that information without sources."

# Keypoint fate: retain, crossmodal (answerable from both sources), unanswerable
# (source answer wrong), both (classifier contradicts the claimed modality).
DOCS = [
    {
        "file": "tiktok_adoption",
        "title": "TikTok use among U.S. adults",
        "paragraphs": [
            {
                "text": "TikTok has grown quickly among American adults. "
                        "33% of U.S. adults say they use TikTok, up from 21% in 2021.",
                "keypoints": [
                    ("33% of U.S. adults say they use TikTok.", "retain",
                     "What share of U.S. adults say they use TikTok?"),
                    ("21% of U.S. adults said they used TikTok in 2021.", "both",
                     "What share of U.S. adults used TikTok in 2021?"),
                ],
                "pronoun": "It is especially popular with younger adults.",
            },
            {
                "text": "Use of the platform differs by gender. "
                        "40% of U.S. women say they use TikTok, compared with 25% of U.S. men.",
                "keypoints": [
                    ("40% of U.S. women say they use TikTok.", "retain",
                     "What share of U.S. women say they use TikTok?"),
                    ("25% of U.S. men say they use TikTok.", "unanswerable",
                     "What share of U.S. men say they use TikTok?"),
                ],
            },
        ],
        "chart": {
            "image": "adoption_by_age.svg",
            "title": "Share of U.S. adults who use TikTok, by age",
            "caption": "TikTok use by age group",
            "bars": [("Ages 18-29", 62), ("Ages 30-49", 39), ("Ages 50-64", 24), ("Ages 65+", 10)],
            "keypoints": [
                ("62% of adults ages 18 to 29 say they use TikTok.", "retain",
                 "What share of adults ages 18 to 29 use TikTok?"),
                ("10% of adults ages 65 and older say they use TikTok.", "retain",
                 "What share of adults ages 65 and older use TikTok?"),
            ],
        },
    },
    {
        "file": "tiktok_reasons",
        "title": "Why U.S. adults use TikTok",
        "paragraphs": [
            {
                "text": "Entertainment is the most common reason people give for using TikTok. "
                        "62% of U.S. adults who use TikTok say a reason they use the site is to look at "
                        "product reviews or recommendations.",
                "keypoints": [
                    ("Entertainment is the most common reason people give for using TikTok.", "retain",
                     "What is the most common reason people give for using TikTok?"),
                    ("62% of U.S. adults who use TikTok say a reason they use the site is to look at "
                     "product reviews or recommendations.", "crossmodal",
                     "What share of TikTok users look at product reviews or recommendations on the site?"),
                ],
            },
            {
                "text": "Many users also turn to the platform for news. "
                        "43% of TikTok users say they regularly get news on TikTok, up from 22% in 2020.",
                "keypoints": [
                    ("43% of TikTok users say they regularly get news on TikTok.", "retain",
                     "What share of TikTok users regularly get news on the site?"),
                ],
            },
        ],
        "chart": {
            "image": "reasons.svg",
            "title": "Reasons U.S. adult TikTok users give for using the site",
            "caption": "Reasons for using TikTok",
            "bars": [("Entertainment", 83), ("Product reviews or recommendations", 62),
                     ("Keeping up with the news", 36), ("Finding new music", 35)],
            "keypoints": [
                ("83% of U.S. adult TikTok users say entertainment is a reason they use the site.", "retain",
                 "How many U.S. adult TikTok users name entertainment as a reason for using the site?"),
                ("35% of U.S. adult TikTok users say finding new music is a reason they use the site.", "retain",
                 "How many U.S. adult TikTok users name finding new music as a reason for using the site?"),
            ],
        },
    },
    {
        "file": "tiktok_creators",
        "title": "Who posts on TikTok",
        "paragraphs": [
            {
                "text": "Most TikTok videos come from a small share of users. "
                        "The top 25% of U.S. adult TikTok users produce 98% of publicly accessible videos.",
                "keypoints": [
                    ("The top 25% of U.S. adult TikTok users produce 98% of publicly accessible videos.",
                     "retain", "What share of publicly accessible videos do the most active users produce?"),
                ],
            },
            {
                "text": "The typical user rarely posts. "
                        "The median U.S. adult TikTok user has posted 7 videos in total.",
                "keypoints": [
                    ("The median U.S. adult TikTok user has posted 7 videos in total.", "retain",
                     "How many videos has the median U.S. adult TikTok user posted?"),
                ],
            },
        ],
        "chart": {
            "image": "posting.svg",
            "title": "U.S. adult TikTok users who have posted a video",
            "caption": "Posting on TikTok",
            "bars": [("Have posted a video", 47), ("Have never posted a video", 53)],
            "keypoints": [
                ("47% of U.S. adult TikTok users have posted a video.", "retain",
                 "What share of U.S. adult TikTok users have posted a video?"),
                ("53% of U.S. adult TikTok users have never posted a video.", "retain",
                 "What share of U.S. adult TikTok users have never posted a video?"),
            ],
        },
    },
]


def svg(chart):
    rows = []
    height = 60 + 40 * len(chart["bars"])
    rows.append('<svg xmlns="http://www.w3.org/2000/svg" width="640" height="%d" font-family="sans-serif">' % height)
    rows.append('  <text x="20" y="30" font-size="16">%s</text>' % chart["title"])
    for i, (label, value) in enumerate(chart["bars"]):
        y = 50 + 40 * i
        rows.append('  <text x="20" y="%d" font-size="12">%s</text>' % (y + 18, label))
        rows.append('  <rect x="280" y="%d" width="%d" height="24" fill="#4a7ab5"/>' % (y, value * 3))
        rows.append('  <text x="%d" y="%d" font-size="12">%d%%</text>' % (288 + value * 3, y + 18, value))
    rows.append("</svg>")
    return "\n".join(rows) + "\n"


def raw_ocr(chart):
    return chart["title"] + " | " + " | ".join("%s %d%%" % (label, value) for label, value in chart["bars"])


def main():
    rules = []

    def rule(template, contains, response, kind=None):
        entry = {"template": template, "contains": contains, "response": response}
        if kind:
            entry["kind"] = kind
        rules.append(entry)

    retained = []  # (statement, modality, doc index, question)
    for d, doc in enumerate(DOCS):
        chart = doc["chart"]
        blocks = [{"text": doc["paragraphs"][0]["text"]},
                  {"image": "images/" + chart["image"], "caption": chart["caption"]}]
        blocks += [{"text": p["text"]} for p in doc["paragraphs"][1:]]
        bundle = {"title": doc["title"], "source_uri": "fixture://demo/" + doc["file"],
                  "domain_tag": "social_media", "blocks": blocks}
        with open(os.path.join(HERE, "bundles", doc["file"] + ".json"), "w") as f:
            json.dump(bundle, f, indent=2)
            f.write("\n")
        with open(os.path.join(HERE, "bundles", "images", chart["image"]), "w") as f:
            f.write(svg(chart))

        rule("chart_ocr", {"image": chart["image"]}, {"structured": {
            "entries": [{"label": label, "series": "", "value": value, "unit": "%"} for label, value in chart["bars"]],
            "raw_ocr_text": raw_ocr(chart)}}, kind="ocr")

        for p in doc["paragraphs"]:
            statements = [k[0] for k in p["keypoints"]]
            if "pronoun" in p:
                statements.append(p["pronoun"])
            rule("extract_text_keypoints", {"chunk": p["text"]}, {"structured": {"keypoints": statements}})
        rule("extract_chart_keypoints", {"raw_ocr_text": chart["title"]},
             {"structured": {"keypoints": [k[0] for k in chart["keypoints"]]}})

        sources = [(k, "text") for p in doc["paragraphs"] for k in p["keypoints"]]
        sources += [(k, "chart") for k in chart["keypoints"]]
        for (statement, fate, probe), modality in sources:
            other = "chart" if modality == "text" else "text"
            rule("classify_keypoint", {"keypoint": statement},
                 {"structured": {"modality": other if fate == "both" else modality}})
            rule("generate_probe", {"keypoint": statement}, probe)
            native_answer = "The figure is not stated." if fate == "unanswerable" else statement
            rule("answer_from_" + modality, {"question": probe}, native_answer)
            if fate == "crossmodal":
                rule("answer_from_" + other, {"question": probe}, statement)
            if fate == "retain":
                retained.append((statement, modality, d, probe))

    rule("answer_from_text", {}, NOT_IN_TEXT)
    rule("answer_from_chart", {}, NOT_IN_CHART)
    rule("judge_equivalent", {}, {"structured": {"equivalent": False}})

    # Generation: one question per keypoint and per ordered pair the category
    # filters can produce (a chart keypoint is always the selected side of a
    # text_chart pair). Pair questions embed the single-point ones, so their
    # rules go first.
    def respond(question, single, both):
        rule("respond_with_context", {"question": question, "context": "[9] "},
             "From the retrieved material: " + single)
        rule("respond_with_context", {"question": question}, "According to the sources: " + both)
        rule("extract_response_keypoints", {"question": question, "response": "From the retrieved material: "},
             {"structured": {"keypoints": [single]}})
        rule("extract_response_keypoints", {"question": question, "response": "According to the sources: "},
             {"structured": {"keypoints": both.split(" | ")}})

    for (a, ma, da, qa), (b, mb, db, qb) in permutations(retained, 2):
        if ma == "text" and mb == "chart":
            continue
        question = qa[:-1] + ", and " + qb[0].lower() + qb[1:]
        rule("generate_multihop", {"keypoint_a": a, "keypoint_b": b},
             {"structured": {"question": question, "answer": a + " " + b}})
        respond(question, a, a + " | " + b)

    for statement, modality, d, probe in retained:
        question = probe
        rule("generate_single_point", {"keypoint": statement}, {"structured": {"question": question,
                                                                              "answer": statement}})
        respond(question, statement, statement)

    rule("respond_no_context", {}, DECLINE)
    rule("extract_response_keypoints", {"response": DECLINE}, {"structured": {"keypoints": []}})
    rule("caption_chart", {}, "Bar chart of survey percentages about TikTok use.")
    rule("modality_preference", {}, {"structured": {"preference": "neither"}})

    with open(os.path.join(HERE, "providers.jsonl"), "w") as f:
        for r in rules:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    print("%d rules, %d retained keypoints" % (len(rules), len(retained)))


if __name__ == "__main__":
    main()
