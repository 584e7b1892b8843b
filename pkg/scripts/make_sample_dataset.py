"""Regenerate the bundled 64-example synthetic MQM dataset.

    python scripts/make_sample_dataset.py src/batchgemba/data/sample_dataset.jsonl

Segments are short paragraphs assembled from small parallel sentence banks.
Error spans are placed on whole target words (occasionally on the source for
omissions) and the human score is the severity-weighted penalty of those spans.
"""

import argparse
import random
import re

from batchgemba.dataset import write_dataset
from batchgemba.mqm import ErrorSpan, TranslationExample, score_from_errors

EN_DE = [
    ("The city council approved the new budget on Tuesday evening.", "Der Stadtrat hat den neuen Haushalt am Dienstagabend genehmigt."),
    ("Several residents complained about the noise from the construction site.", "Mehrere Anwohner beschwerten sich über den Lärm von der Baustelle."),
    ("The museum will stay open until midnight during the summer festival.", "Das Museum bleibt während des Sommerfestes bis Mitternacht geöffnet."),
    ("Our customer service team will contact you within two working days.", "Unser Kundenservice wird sich innerhalb von zwei Werktagen bei Ihnen melden."),
    ("Please keep your receipt in case you want to return the product.", "Bitte bewahren Sie Ihren Beleg auf, falls Sie das Produkt zurückgeben möchten."),
    ("The train to Munich was delayed by almost forty minutes.", "Der Zug nach München hatte fast vierzig Minuten Verspätung."),
    ("Scientists have discovered a new species of frog in the rainforest.", "Wissenschaftler haben im Regenwald eine neue Froschart entdeckt."),
    ("The company expects its profits to grow slightly next year.", "Das Unternehmen erwartet, dass seine Gewinne im nächsten Jahr leicht steigen."),
    ("Heavy rain caused flooding in several villages along the river.", "Starker Regen verursachte Überschwemmungen in mehreren Dörfern entlang des Flusses."),
    ("The coach praised his players for their discipline and effort.", "Der Trainer lobte seine Spieler für ihre Disziplin und ihren Einsatz."),
    ("You can change your password at any time in the account settings.", "Sie können Ihr Passwort jederzeit in den Kontoeinstellungen ändern."),
    ("The exhibition shows paintings from the early twentieth century.", "Die Ausstellung zeigt Gemälde aus dem frühen zwanzigsten Jahrhundert."),
    ("Many students struggle to find affordable housing near the university.", "Viele Studierende haben Mühe, bezahlbaren Wohnraum in der Nähe der Universität zu finden."),
    ("The minister refused to comment on the rumours about her resignation.", "Die Ministerin lehnte es ab, sich zu den Gerüchten über ihren Rücktritt zu äußern."),
    ("Fresh vegetables are delivered to the market every morning.", "Frisches Gemüse wird jeden Morgen auf den Markt geliefert."),
    ("The software update fixes several security problems.", "Das Software-Update behebt mehrere Sicherheitsprobleme."),
]

ZH_EN = [
    ("市政府周二晚上批准了新的预算方案。", "The city government approved the new budget plan on Tuesday evening."),
    ("许多居民抱怨建筑工地的噪音太大。", "Many residents complained that the noise from the construction site was too loud."),
    ("这家博物馆在夏季节日期间开放到午夜。", "This museum stays open until midnight during the summer festival."),
    ("我们的客服团队将在两个工作日内与您联系。", "Our customer service team will contact you within two working days."),
    ("如果您想退货，请保留好购物小票。", "If you want to return the goods, please keep your shopping receipt."),
    ("开往上海的高铁晚点了将近四十分钟。", "The high-speed train to Shanghai was delayed by nearly forty minutes."),
    ("科学家在热带雨林中发现了一种新的青蛙。", "Scientists discovered a new kind of frog in the tropical rainforest."),
    ("公司预计明年的利润将略有增长。", "The company expects its profits to increase slightly next year."),
    ("暴雨导致河边的几个村庄发生了洪水。", "Heavy rain caused floods in several villages by the river."),
    ("教练称赞队员们的纪律和努力。", "The coach praised the players for their discipline and hard work."),
    ("您可以随时在账户设置中修改密码。", "You can change your password at any time in the account settings."),
    ("这次展览展出了二十世纪初的绘画作品。", "This exhibition displays paintings from the early twentieth century."),
    ("很多学生很难在大学附近找到便宜的住房。", "Many students find it hard to get cheap housing near the university."),
    ("部长拒绝就有关她辞职的传言发表评论。", "The minister declined to comment on rumours about her resignation."),
    ("新鲜的蔬菜每天早上都会送到市场。", "Fresh vegetables are delivered to the market every morning."),
    ("这次软件更新修复了几个安全问题。", "This software update fixes several security issues."),
]

HE_EN = [
    ("מועצת העיר אישרה את התקציב החדש ביום שלישי בערב.", "The city council approved the new budget on Tuesday evening."),
    ("כמה תושבים התלוננו על הרעש מאתר הבנייה.", "Several residents complained about the noise from the building site."),
    ("המוזיאון יהיה פתוח עד חצות במהלך פסטיבל הקיץ.", "The museum will be open until midnight during the summer festival."),
    ("צוות שירות הלקוחות שלנו ייצור איתך קשר תוך שני ימי עבודה.", "Our customer service team will contact you within two business days."),
    ("אנא שמרו את הקבלה למקרה שתרצו להחזיר את המוצר.", "Please keep the receipt in case you want to return the product."),
    ("הרכבת לחיפה התעכבה בכמעט ארבעים דקות.", "The train to Haifa was delayed by almost forty minutes."),
    ("מדענים גילו מין חדש של צפרדע ביער הגשם.", "Scientists discovered a new species of frog in the rainforest."),
    ("החברה צופה שהרווחים שלה יגדלו מעט בשנה הבאה.", "The company expects its profits to grow slightly next year."),
    ("גשם כבד גרם להצפות בכמה כפרים לאורך הנהר.", "Heavy rain caused flooding in several villages along the river."),
    ("המאמן שיבח את השחקנים על המשמעת והמאמץ שלהם.", "The coach praised the players for their discipline and effort."),
    ("ניתן לשנות את הסיסמה בכל עת בהגדרות החשבון.", "You can change the password at any time in the account settings."),
    ("התערוכה מציגה ציורים מתחילת המאה העשרים.", "The exhibition presents paintings from the beginning of the twentieth century."),
    ("סטודנטים רבים מתקשים למצוא דיור זול ליד האוניברסיטה.", "Many students have difficulty finding cheap housing near the university."),
    ("השרה סירבה להגיב על השמועות בדבר התפטרותה.", "The minister refused to respond to the rumours about her resignation."),
    ("ירקות טריים מגיעים לשוק בכל בוקר.", "Fresh vegetables arrive at the market every morning."),
    ("עדכון התוכנה מתקן כמה בעיות אבטחה.", "The software update fixes several security problems."),
]

BANKS = [("en", "de", EN_DE, 24), ("zh", "en", ZH_EN, 20), ("he", "en", HE_EN, 20)]
SEVERITIES = ["minor"] * 10 + ["major"] * 7 + ["critical"] * 3
CATEGORIES = [
    "accuracy/mistranslation",
    "accuracy/addition",
    "fluency/grammar",
    "fluency/spelling",
    "style",
    "terminology",
]
WORD = re.compile(r"[^\W\d_]{3,}")


def segment(rng, bank, joiner):
    picks = rng.sample(range(len(bank)), rng.choice([5, 6, 6, 7]))
    src = joiner.join(bank[i][0] for i in picks)
    tgt = " ".join(bank[i][1] for i in picks)
    return src, tgt


def main(out):
    rng = random.Random(20250301)
    examples = []
    for src_lang, tgt_lang, bank, n in BANKS:
        joiner = "" if src_lang == "zh" else " "
        for k in range(n):
            src, tgt = segment(rng, bank, joiner)
            spans = []
            words = list(WORD.finditer(tgt))
            taken = set()
            for _ in range(rng.choice([0, 0, 1, 1, 2, 3])):
                m = rng.choice(words)
                if m.start() in taken:
                    continue
                taken.add(m.start())
                spans.append(ErrorSpan("target", m.start(), m.end(), rng.choice(SEVERITIES), rng.choice(CATEGORIES)))
            if rng.random() < 0.15:
                # omission: the untranslated source material is marked
                m = rng.choice(list(WORD.finditer(src)) or [re.search(r"\w+", src)])
                spans.append(ErrorSpan("source", m.start(), m.end(), "major", "accuracy/omission"))
            spans.sort(key=lambda s: (s.side, s.start_char))
            examples.append(
                TranslationExample(
                    id=f"{src_lang}{tgt_lang}-{k:03d}",
                    source_lang=src_lang,
                    target_lang=tgt_lang,
                    source_text=src,
                    target_text=tgt,
                    human_score=score_from_errors(spans),
                    spans=tuple(spans),
                )
            )
    write_dataset(examples, out)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Regenerate the bundled synthetic MQM dataset.")
    parser.add_argument("out", help="output path, e.g. src/batchgemba/data/sample_dataset.jsonl")
    main(parser.parse_args().out)
