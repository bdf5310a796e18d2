#!/usr/bin/env python3
"""Regenerate data/language_profiles.json from the reference texts below.

Profiles are relative character-trigram frequencies over the normalized stream
(see dwc_curator.ingest.text_trigrams), truncated to the TOP_N most frequent
trigrams. The reference snippets are ordinary prose written for this purpose;
they only need to be representative of each script and its function words.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dwc_curator.ingest import text_trigrams  # noqa: E402

TOP_N = 2500

EN = """
The committee met on Tuesday morning to review the annual report and to discuss
the budget for the coming year. Most of the members agreed that the proposal was
reasonable, although several questions remained about the schedule and the cost
of the new building. The chairman said that the decision would be announced
after the next meeting, and that everyone would have another chance to comment.
In the afternoon the weather was clear, so the visitors walked along the river
and watched the boats pass under the old stone bridge. A light wind moved
through the trees, and children were playing near the fountain in the park.
Scientists have found that regular exercise improves both health and memory.
People who walk for thirty minutes every day tend to sleep better and report
higher levels of energy at work. The study followed two thousand adults over
five years and controlled for diet, age, and income. The results were published
last week and received wide attention in the national press. Many readers wrote
letters asking how they could change their own habits, and the authors answered
with a simple suggestion: start small, be patient, and keep a record of what
you do each day. Over time these small choices add up to something that matters,
and the evidence shows that almost anyone can benefit from them regardless of
where they live or how busy their working life might seem.
When the first trains crossed the mountains more than a century ago, the towns
along the line grew quickly. Farmers could send their grain to the coast, and
families moved inland to build schools, shops, and small factories. Some of
those buildings still stand today, and local historians give tours every summer
explaining how the railway changed daily life. Visitors often ask why the old
station has two clocks; the answer is that each company kept its own time until
the government finally set a single standard for the whole country.
The restaurant on the corner serves breakfast until eleven and is usually full
by nine. Regular customers know to order the bread early because the kitchen
bakes only a few dozen loaves each morning. On weekends a line forms outside
the door, and the owner brings coffee to the people waiting on the sidewalk.
Such small gestures are part of why the place has survived for forty years
while larger businesses nearby have opened and closed within a season or two.
"""

ZH = """
今天上午,市政府召开了新闻发布会,介绍了城市交通建设的最新进展。发言人表示,新的地铁线路
将在明年春天正式开通,沿线设有十二个车站,连接老城区和新的商业中心。许多市民对这个消息感
到高兴,因为现在上下班的时间太长,道路经常拥堵。专家认为,公共交通的发展可以减少汽车的使
用,改善空气质量,也有利于城市的长期发展。除了地铁之外,政府还计划增加公交车的数量,并且
在主要街道上修建自行车道,方便大家绿色出行。根据初步统计,这些项目将创造几千个就业机会,
给当地经济带来明显的好处。下个月,相关部门将组织市民代表参观施工现场,听取大家的意见和建
议。一位住在附近的老人说,他希望工程能够按时完成,这样孙子上学就方便了。记者了解到,整个
项目的投资超过一百亿元,资金主要来自政府预算和社会投资。未来几年,城市还将建设新的公园和
图书馆,提高居民的生活质量。教育和医疗也是重点领域,新的学校和医院正在规划之中。很多年轻
人表示,他们愿意留在这座城市工作和生活,因为这里的机会越来越多,环境也越来越好。
昨天下午,我和朋友一起去了市中心的博物馆,那里正在举办一个关于古代历史的展览。我们看到了
很多珍贵的文物,有陶器、青铜器,还有古代的书法作品。讲解员告诉我们,这些东西有的已经有几
千年的历史了。看完展览以后,我们在附近的一家小饭馆吃了晚饭。那里的菜做得很好吃,价格也不
贵,我们点了鱼、豆腐和一个青菜,最后还喝了一碗汤。吃饭的时候,我们聊起了小时候的事情,大
家都觉得时间过得真快。朋友说他下个星期要去南方出差,可能要一个月才能回来。我们约好等他回
来以后,一起去爬山。现在是春天,山上的花都开了,天气不冷也不热,正是出去玩的好时候。回家
的路上,我在书店买了两本小说和一本关于做菜的书。我最近想学做几个新菜,周末的时候做给家人
吃。生活中的这些小事情,虽然平常,但是让人觉得很幸福。
科学家最近发现,每天坚持运动半个小时,对身体和记忆力都有很大的好处。研究人员对两千名成年
人进行了五年的跟踪调查,结果发现,经常走路的人睡眠质量更好,工作的时候精力也更充足。这项
研究发表以后,受到了社会的广泛关注。很多读者写信询问应该怎样改变自己的生活习惯,研究人员
的建议很简单:从小事开始,保持耐心,每天记录自己做了什么。时间长了,这些小小的选择就会带
来明显的变化。无论住在哪里,无论工作多忙,几乎每个人都可以从中受益。
"""

JA = """
今日は朝から天気がよくて、近くの公園まで散歩に行きました。桜の花がちょうど満開で、たくさんの
人が写真を撮っていました。子どもたちは広場で遊んでいて、とても賑やかでした。午後には友達と駅前
の喫茶店で会って、最近の仕事について話しました。彼は新しい会社に入ったばかりで、毎日が忙しい
そうですが、仕事の内容には満足していると言っていました。来月、一緒に旅行に行く計画を立てて
います。京都のお寺を見てから、海の近くの温泉に泊まるつもりです。日本の電車は時間に正確なので、
旅行の計画が立てやすいと思います。夜は家に帰って、母が作ってくれた晩ご飯を食べました。テレビ
のニュースでは、新しい技術についての特集をやっていて、人工知能が医療の分野でも使われ始めている
と紹介していました。これからの社会がどう変わっていくのか、少し不安もありますが、楽しみでも
あります。寝る前に本を読むのが習慣になっていて、今は歴史の本を読んでいます。昔の人々の生活を
知ると、今の生活がどれほど便利になったかがよく分かります。明日も早く起きて、仕事の前に少し
走るつもりです。健康のために、毎日の小さな習慣を大切にしたいと思っています。
先週の土曜日、家族と一緒に海へ行きました。朝早く家を出たので、道路は空いていて、二時間ほどで
着きました。海の水はまだ少し冷たかったですが、子どもたちは元気に泳いでいました。昼ご飯は浜辺
の近くの店で魚料理を食べました。新鮮でとてもおいしかったです。帰りに市場に寄って、野菜と果物
を買いました。店の人がおすすめの食べ方を教えてくれて、とても親切でした。家に着いたのは夜の
八時ごろで、みんな疲れていましたが、楽しい一日になりました。次の休みには山に登ろうと話して
います。日本には四つの季節があって、それぞれの季節に違う楽しみがあります。春は花見、夏は祭り、
秋は紅葉、冬は雪景色です。季節の変化を感じながら生活できるのは、とても幸せなことだと思います。
最近、駅の近くに新しい図書館ができました。建物は明るくて広く、勉強する学生や本を読む老人で
いつも混んでいます。私も週末によく行って、雑誌を読んだり、借りた本を返したりしています。
"""

ID = """
Pada hari Senin pagi, pemerintah kota mengumumkan rencana pembangunan jalur
kereta baru yang akan menghubungkan pusat kota dengan kawasan industri di
bagian timur. Menurut juru bicara, proyek ini akan selesai dalam waktu tiga
tahun dan diharapkan dapat mengurangi kemacetan yang selama ini menjadi
masalah utama bagi warga. Banyak orang menyambut baik kabar tersebut karena
mereka harus menghabiskan waktu berjam-jam di jalan setiap hari. Para ahli
mengatakan bahwa transportasi umum yang baik sangat penting untuk pertumbuhan
ekonomi dan kualitas hidup masyarakat. Selain itu, pemerintah juga berencana
menambah jumlah bus dan membangun jalur sepeda di beberapa jalan utama.
Anggaran untuk proyek ini berasal dari pemerintah pusat dan investasi swasta.
Seorang warga yang tinggal di dekat stasiun mengatakan bahwa dia berharap
pembangunan berjalan lancar dan tidak mengganggu kegiatan sehari-hari.
Sementara itu, sekolah dan rumah sakit baru juga sedang direncanakan untuk
tahun depan. Dengan semua perubahan ini, banyak anak muda memilih untuk tetap
tinggal dan bekerja di kota karena kesempatan kerja semakin banyak dan
lingkungan semakin nyaman. Mereka percaya bahwa masa depan kota akan lebih
baik apabila semua pihak bekerja sama dan saling mendukung dalam setiap
langkah pembangunan yang dilakukan oleh pemerintah daerah.
Kemarin sore saya dan keluarga pergi ke pasar tradisional untuk membeli bahan
makanan. Kami membeli ikan segar, sayur, cabai, dan beberapa jenis buah yang
sedang musim. Harga bulan ini sedikit naik karena musim hujan, tetapi para
pedagang tetap ramah dan memberikan harga yang wajar. Setelah itu kami mampir
ke warung kopi di sudut jalan dan berbicara dengan pemiliknya tentang sejarah
daerah tersebut. Dia bercerita bahwa dulu kawasan ini hanya berupa sawah dan
kebun, namun sekarang sudah penuh dengan rumah dan toko. Anak-anak bermain di
lapangan sambil menunggu hujan berhenti, lalu kami pulang bersama sebelum
malam tiba. Di rumah, ibu memasak ikan dengan bumbu kuning dan kami makan
malam bersama sambil membicarakan rencana liburan akhir tahun. Kami berharap
dapat mengunjungi kampung halaman nenek di desa, tempat udara masih bersih
dan sawah terbentang luas sampai kaki gunung. Perjalanan ke sana memang jauh,
tetapi selalu menyenangkan karena kami bisa bertemu saudara dan teman lama
yang sudah lama tidak berjumpa dengan kami sekeluarga.
"""

REFERENCES = {"en": EN, "zh": ZH, "ja": JA, "id": ID}


def trigram_profile(text: str, top_n: int = TOP_N) -> dict[str, float]:
    counts = text_trigrams(text, limit=None)
    total = sum(counts.values())
    return {t: c / total for t, c in counts.most_common(top_n)}


def main() -> int:
    out = Path(__file__).resolve().parents[1] / "src" / "dwc_curator" / "data"
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "k": 3,
        "order": ["en", "zh", "ja", "id"],
        "profiles": {tag: trigram_profile(text) for tag, text in REFERENCES.items()},
    }
    target = out / "language_profiles.json"
    target.write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8"
    )
    sizes = {tag: len(p) for tag, p in payload["profiles"].items()}
    print(f"wrote {target} trigram counts: {sizes}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
