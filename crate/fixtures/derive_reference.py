#!/usr/bin/env python3
"""Builds the trilingual fixture corpus, its rule-derived reference labels
and a few-shot example pool.

Labelling rule: a word ending (after any closing quotes or brackets) in
terminal punctuation is followed by a sentence boundary (SB), a word ending
in a comma or semicolon by an intonational pause (IP), and the last word of
an utterance by SB. Every other junction is AP.
"""
import json
import random
import sys
from pathlib import Path

SENTENCE_END = set(".!?…。！？")
PAUSE = set(",;،、，；")
CLOSING = set("\"'»”’)]}")

CLAUSES = {
    "en": [
        "the train left the station before dawn", "my sister never liked the rain",
        "we waited near the old bridge", "he opened the letter slowly",
        "the market was crowded that morning", "nobody answered the phone",
        "she said the meeting was cancelled", "the children ran toward the sea",
        "our neighbour fixed the broken fence", "the soup was far too salty",
        "I found the keys under the sofa", "they painted the kitchen blue",
        "the museum closes at six", "a cold wind came from the north",
        "the teacher asked a simple question", "his brother works at the hospital",
        "the garden looked different in spring", "we missed the last bus home",
        "the dog barked at every stranger", "the report was due on Friday",
        "she laughed at the old photograph", "the lights went out at midnight",
        "he forgot his umbrella again", "the coffee tasted of smoke",
    ],
    "fr": [
        "le train est parti avant l'aube", "ma sœur n'aimait pas la pluie",
        "nous avons attendu près du vieux pont", "il a ouvert la lettre lentement",
        "le marché était bondé ce matin-là", "personne n'a répondu au téléphone",
        "elle a dit que la réunion était annulée", "les enfants couraient vers la mer",
        "notre voisin a réparé la clôture", "la soupe était bien trop salée",
        "j'ai trouvé les clés sous le canapé", "ils ont peint la cuisine en bleu",
        "le musée ferme à six heures", "un vent froid venait du nord",
        "le professeur a posé une question simple", "son frère travaille à l'hôpital",
        "le jardin semblait différent au printemps", "nous avons raté le dernier bus",
        "le chien aboyait contre chaque inconnu", "le rapport était dû vendredi",
        "elle a ri devant la vieille photo", "les lumières se sont éteintes à minuit",
        "il a encore oublié son parapluie", "le café avait un goût de fumée",
    ],
    "es": [
        "el tren salió antes del amanecer", "a mi hermana nunca le gustó la lluvia",
        "esperamos cerca del puente viejo", "él abrió la carta despacio",
        "el mercado estaba lleno esa mañana", "nadie contestó el teléfono",
        "ella dijo que la reunión se había cancelado", "los niños corrían hacia el mar",
        "nuestro vecino arregló la cerca rota", "la sopa estaba demasiado salada",
        "encontré las llaves debajo del sofá", "pintaron la cocina de azul",
        "el museo cierra a las seis", "un viento frío llegaba del norte",
        "la maestra hizo una pregunta sencilla", "su hermano trabaja en el hospital",
        "el jardín parecía distinto en primavera", "perdimos el último autobús",
        "el perro ladraba a cada desconocido", "el informe vencía el viernes",
        "ella se rió de la foto antigua", "las luces se apagaron a medianoche",
        "él olvidó otra vez su paraguas", "el café sabía a humo",
    ],
}
QUOTES = {"en": ("“", "”"), "fr": ("«", "»"), "es": ("«", "»")}


def core(word):
    while word and word[-1] in CLOSING:
        word = word[:-1]
    return word


def labels_for(text):
    words = text.split()
    out = []
    for i, w in enumerate(words):
        last = core(w)[-1:]
        if i == len(words) - 1 or last in SENTENCE_END:
            out.append("SB")
        elif last in PAUSE:
            out.append("IP")
        else:
            out.append("AP")
    return out


def render(text, labels):
    marks = {"AP": "", "IP": " #", "SB": " /"}
    return " ".join(w + marks[l] for w, l in zip(text.split(), labels))


def sentence(lang, rng):
    n = rng.choice([1, 1, 2, 2, 3])
    parts = rng.sample(CLAUSES[lang], n)
    glue = [rng.choice([", ", ", ", "; "]) for _ in range(n - 1)]
    s = parts[0]
    for g, p in zip(glue, parts[1:]):
        s += g.rstrip() + " " + p
    s = s[0].upper() + s[1:] + rng.choice([".", ".", ".", "!", "?", "…"])
    if rng.random() < 0.12:
        left, right = QUOTES[lang]
        s = left + s + right
    return s


def utterance(lang, rng):
    return " ".join(sentence(lang, rng) for _ in range(rng.choice([1, 1, 2])))


def main(out_dir):
    out = Path(out_dir)
    rng = random.Random(20240521)
    langs = ["en", "fr", "es"]
    corpus, reference, pool = [], [], []
    for i in range(100):
        lang = langs[i % 3]
        text = utterance(lang, rng)
        uid = f"{lang}-{i:03d}"
        corpus.append({"id": uid, "language": lang, "text": text})
        labels = labels_for(text)
        reference.append({"utterance_id": uid, "annotator": "H-T",
                          "annotated": render(text, labels), "labels": labels})
    for lang in langs:
        for j in range(24):
            text = utterance(lang, rng)
            labels = labels_for(text)
            pool.append({"utterance_id": f"pool-{lang}-{j:02d}", "annotator": "H-T",
                         "annotated": render(text, labels), "labels": labels,
                         "language": lang, "text": text})

    def dump(name, rows):
        with open(out / name, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")

    dump("trilingual.jsonl", corpus)
    dump("trilingual.reference.jsonl", reference)
    dump("example_pool.jsonl", pool)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent)
