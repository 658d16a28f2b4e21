#!/usr/bin/env python3
"""Derives the golden prompt renderings from the protocol templates.

Independent of the Rust renderer: templates are literals here, substitution
is plain string replacement, and the codebook is read with a small parser.
Run from this directory; writes <config>.system.txt / <config>.user.txt.
"""
import os
import re

HERE = os.path.dirname(os.path.abspath(__file__))
CODEBOOK = os.path.join(HERE, "..", "..", "..", "resources", "codebook.toml")

COARSE_CD = (
    "You are a classifier for predicting whether the given text is intellectual humility, intellectual arrogant, "
    "or neutral. You must choose the answer from the following options: neutral, intellectual humility, and "
    "intellectual arrogance.\n"
    "Intellectual humility means recognizing that their beliefs might be wrong, including the following features: "
    "{{IH_code}}. If it follows any of this, it should be labeled as Intellectual humility.\n"
    "Intellectual arrogance is a state of mind where someone has an exaggerated view of their own intellect and "
    "knowledge and believes it is superior to others, such as the following features: {{IA_code}}. The list of "
    "features is not exhaustive.\n"
    "Neutral means not related to religious discourse or not enough information to classify as intellectual "
    "humility or intellectual arrogance."
)

COARSE_C = (
    "You are a classifier for predicting whether the given text is intellectual humility, intellectual arrogant, "
    "or neutral. You must choose the answer from the following options: neutral, intellectual humility, and "
    "intellectual arrogant.\n"
    "Intellectual humility means that it follows at least one of the following features: {{IH_Code}}. If it "
    "follows any of this, it should be labeled as Intellectual humility.\n"
    "Intellectual arrogant means that it follows at least one of the following features:  {{IA_Code}}. If it "
    "follows any of this, it should be labeled as Intellectually arrogant.\n"
    "Neutral means not related to religious discourse or lacking sufficient information for classification."
)

# The listing breaks off after "separate each label with"; completed with "a comma."
MS = (
    "Your task is to label the given text from Reddit about religion. The given text includes the Title, the "
    "content of the Submission, the content of the Comment, and the Target Text. Please label the Target Text "
    "with one or more labels from the following list:\"{{Code_list}}\".\n"
    "Each sample might be labelled with multiple labels, please separate each label with a comma."
)

BQ = (
    "Your task is to label the given text from Reddit about religion. The given text includes the Title, the "
    "content of the Submission, the content of the Comment, and the Target Text. If the Target Text can be "
    "described as `{{Code}}`, answer `Yes`. If it does not fit this description, answer `No`."
)

USER_HEAD = (
    "Here is a discussion with the title: '{{Post_title}}', and the content is as follows: '{{Post_content}}'. "
    "The first comment is: '{{First_comment}}'."
)
USER_SECOND = "The second comment is: '{{Second_comment}}'."
USER_TAIL = "Based on the content do you think Comment: '{{Focal_comment}}' is '{{Label}}' or not."

MS_PHRASE = "one or more of the listed labels"
COARSE_PHRASE = "intellectual humility, intellectual arrogance, or neutral"
SEP = "; "

TARGETS = {
    "first": {
        "title": "Is doubt a sin?",
        "content": "I have been struggling with whether questioning scripture is wrong.",
        "first": None,
        "target": "I might be wrong, but I think doubt is part of faith. That's just my view.",
    },
    "second": {
        "title": "Is doubt a sin?",
        "content": "I have been struggling with whether questioning scripture is wrong.",
        "first": "Doubt is the opposite of faith.",
        "target": "Anyone who has actually read the texts knows you're wrong.",
    },
}


def read_codebook(path):
    labels = []
    cur = None
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line == "[[labels]]":
                cur = {}
                labels.append(cur)
                continue
            m = re.match(r'^(\w+)\s*=\s*"(.*)"$', line)
            if m and cur is not None:
                cur[m.group(1)] = m.group(2).replace('\\"', '"').replace("\\\\", "\\")
    return labels


def code(label, content):
    if content == "C":
        return label["name"]
    if content == "D":
        return label["definition"]
    return label["name"] + ": " + label["definition"]


def fill(text, values):
    for k, v in values.items():
        text = text.replace("{{" + k + "}}", v)
    assert "{{" not in text, text
    return text


def user(t, phrase):
    parts = [
        fill(
            USER_HEAD,
            {
                "Post_title": t["title"],
                "Post_content": t["content"],
                "First_comment": t["first"] if t["first"] is not None else t["target"],
            },
        )
    ]
    if t["first"] is not None:
        parts.append(fill(USER_SECOND, {"Second_comment": t["target"]}))
    parts.append(fill(USER_TAIL, {"Focal_comment": t["target"], "Label": phrase}))
    return "\n\n".join(parts)


def main():
    labels = read_codebook(CODEBOOK)
    assert len(labels) == 13
    ih = [l for l in labels if l["polarity"] == "IH"]
    ia = [l for l in labels if l["polarity"] == "IA"]
    apb = next(l for l in labels if l["abbrev"] == "APB")
    out = {}
    for content, tag in [("C", "C"), ("D", "D"), ("CD", "C&D")]:
        out[tag + "-MS"] = (
            fill(MS, {"Code_list": SEP.join(code(l, content) for l in labels)}),
            MS_PHRASE,
        )
        out[tag + "-BQ"] = (fill(BQ, {"Code": code(apb, content)}), code(apb, content))
        ih_list = SEP.join(code(l, content) for l in ih)
        ia_list = SEP.join(code(l, content) for l in ia)
        if content == "C":
            sys_text = fill(COARSE_C, {"IH_Code": ih_list, "IA_Code": ia_list})
        else:
            sys_text = fill(COARSE_CD, {"IH_code": ih_list, "IA_code": ia_list})
        out[tag + "-coarse"] = (sys_text, COARSE_PHRASE)
    for name, (system, phrase) in sorted(out.items()):
        stem = name.replace("&", "and")
        with open(os.path.join(HERE, stem + ".system.txt"), "w", encoding="utf-8") as f:
            f.write(system + "\n")
        with open(os.path.join(HERE, stem + ".user.txt"), "w", encoding="utf-8") as f:
            f.write(user(TARGETS["first"], phrase) + "\n")
    with open(os.path.join(HERE, "CandD-BQ.second.user.txt"), "w", encoding="utf-8") as f:
        f.write(user(TARGETS["second"], code(apb, "CD")) + "\n")


if __name__ == "__main__":
    main()
