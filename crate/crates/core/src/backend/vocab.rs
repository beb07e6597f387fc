/// Built-in 256-token vocabulary of the toy backend: Maltese function words,
/// occupations in both genders, adjectives and a few English tokens.
pub const DEFAULT_TOY_VOCAB: [&str; 256] = [
    ".", ",", "!", "?", "-", "'", ";", ":", "(", ")", "il", "l", "it", "is", "id", "in", "ir",
    "ix", "iż", "iċ", "hu", "hi", "huma", "jien", "int", "aħna", "intom", "u", "jew", "imma",
    "għax", "li", "ma", "mhux", "ta", "tal", "tad", "tat", "fi", "fil", "fuq", "taħt", "mal",
    "bħala", "minn", "mill", "lil", "lill", "sa", "għal", "għall", "kien", "kienet", "kienu",
    "jkun", "tkun", "huwa", "hija", "jaħdem", "taħdem", "jaħdmu", "jħobb", "tħobb", "jħobbu",
    "jgħix", "tgħix", "qatt", "dejjem", "ħafna", "ftit", "biss", "ukoll", "hemm", "hawn",
    "issa", "llum", "għada", "tabib", "tabiba", "għalliem", "għalliema", "avukat", "avukata",
    "infermier", "infermiera", "pijunier", "pijuniera", "maxtrudaxxa", "sagristan", "sajjied",
    "kok", "koka", "skrivan", "skrivana", "messaġġier", "segretarju", "segretarja", "attur",
    "attriċi", "missjunarju", "missjunarja", "inġinier", "inġiniera", "xjenzjat", "xjenzjata",
    "pulizija", "surmast", "surmastra", "kittieb", "kittieba", "kantant", "kantanta",
    "bejjiegħ", "bejjiegħa", "bidwi", "bidwija", "ħaddiem", "ħaddiema", "direttur",
    "direttriċi", "professur", "professuressa", "raġel", "mara", "tifel", "tifla", "missier",
    "omm", "ħu", "oħt", "nannu", "nanna", "ziju", "zija", "re", "reġina", "prinċep",
    "prinċipessa", "sinjur", "sinjura", "guvernatur", "kompetenti", "inkompetenti",
    "professjonali", "intelliġenti", "soċjali", "sensittiv", "sensittiva", "ikrah", "kerha",
    "kattiv", "kattiva", "sabiħ", "sabiħa", "qawwi", "qawwija", "dgħajjef", "dgħajfa", "bravu",
    "brava", "għaqli", "għaqlija", "ħelu", "ħelwa", "tajjeb", "tajba", "ħażin", "ħażina",
    "xogħol", "dar", "familja", "tfal", "skola", "sptar", "uffiċċju", "kċina", "karozza",
    "belt", "raħal", "flus", "ikel", "ilma", "ktieb", "logħba", "futbol", "mużika", "arti",
    "xjenza", "matematika", "kbir", "kbira", "żgħir", "żgħira", "ġdid", "ġdida", "qadim",
    "qadima", "man", "woman", "he", "she", "doctor", "nurse", "teacher", "lawyer", "engineer",
    "secretary", "the", "a", "of", "and", "to", "was", "his", "her", "him", "john", "jane",
    "kuljum", "filgħodu", "filgħaxija", "ġimgħa", "sena", "xahar", "jixtieq", "tixtieq",
    "jista", "tista", "irid", "trid", "ħamra", "aħmar", "ħadra", "aħdar", "ħabib", "ħabiba",
    "għarus", "għarusa", "student", "studenta", "kuġin", "kuġina", "neputi", "neputija",
    "jsajjar", "ssajjar", "jikteb", "tikteb",
    "ġurnalist", "ġurnalista", "fizjoterapista", "spiżjar", "spiżjara", "barbier", "mekkaniku", "elettriċista",
];
